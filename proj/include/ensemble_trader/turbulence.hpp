#pragma once

// Financial turbulence: Mahalanobis distance of today's returns from a
// trailing window's mean and covariance, plus in-sample threshold calibration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/error.hpp"
#include "ensemble_trader/market_data.hpp"

namespace ensemble_trader {

struct TurbulenceConfig {
    std::size_t lookback = 252;
    double quantile = 0.99;
    double ridge = 1e-8;  // relative to trace(Sigma)/D
};

struct TurbulenceContext {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    std::size_t lookback = 0;
    double ridge = 0.0;  // absolute
};

struct TurbulenceSeries {
    std::vector<double> values;
    std::size_t first_defined = 0;  // values before this index are the 0 fill
    double threshold = 0.0;
};

/// (y - mu)^T (Sigma + ridge I)^{-1} (y - mu), clamped at 0.
inline double turbulence_index(const Eigen::VectorXd& y, const TurbulenceContext& ctx) {
    const auto dim = ctx.mu.size();
    if (y.size() != dim || ctx.sigma.rows() != dim || ctx.sigma.cols() != dim) {
        throw Error(ErrorKind::ShapeError, "turbulence_index: dimension mismatch");
    }
    if (!y.allFinite() || !ctx.mu.allFinite() || !ctx.sigma.allFinite() || !std::isfinite(ctx.ridge) ||
        ctx.ridge < 0.0) {
        throw Error(ErrorKind::InputInvalid, "turbulence_index: non-finite input");
    }
    const Eigen::MatrixXd regularized =
        ctx.sigma + ctx.ridge * Eigen::MatrixXd::Identity(dim, dim);
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(regularized);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14) {
        throw Error(ErrorKind::SingularCovariance, "turbulence_index: regularized covariance is singular");
    }
    const Eigen::VectorXd centered = y - ctx.mu;
    const double value = centered.dot(ldlt.solve(centered));
    return std::max(value, 0.0);
}

/// T x D simple returns of adj_close; row 0 is zero.
inline Eigen::MatrixXd simple_returns(const PricePanel& panel) {
    const auto rows = static_cast<Eigen::Index>(panel.num_dates());
    const auto cols = static_cast<Eigen::Index>(panel.num_assets());
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(rows, cols);
    for (Eigen::Index t = 1; t < rows; ++t) {
        for (Eigen::Index d = 0; d < cols; ++d) {
            const auto tt = static_cast<std::size_t>(t);
            const auto dd = static_cast<std::size_t>(d);
            r(t, d) = panel.price(tt, dd) / panel.price(tt - 1, dd) - 1.0;
        }
    }
    return r;
}

/// Sample mean and covariance (n - 1 normalization) of a block of rows.
inline TurbulenceContext estimate_context(const Eigen::Ref<const Eigen::MatrixXd>& window, double relative_ridge) {
    TurbulenceContext ctx;
    ctx.lookback = static_cast<std::size_t>(window.rows());
    ctx.mu = window.colwise().mean().transpose();
    const Eigen::MatrixXd centered = window.rowwise() - ctx.mu.transpose();
    ctx.sigma = (centered.transpose() * centered) / static_cast<double>(window.rows() - 1);
    ctx.sigma = 0.5 * (ctx.sigma + ctx.sigma.transpose());
    ctx.ridge = relative_ridge * ctx.sigma.trace() / static_cast<double>(ctx.sigma.rows());
    return ctx;
}

/// Turbulence per date from the `lookback` returns strictly before it. Dates
/// without a full window of prior returns are 0.
inline TurbulenceSeries rolling_turbulence(const PricePanel& panel, std::size_t lookback, double relative_ridge) {
    if (lookback < panel.num_assets() + 1) {
        throw Error(ErrorKind::InputInvalid, "rolling_turbulence: lookback must be >= D + 1");
    }
    const Eigen::MatrixXd returns = simple_returns(panel);
    const std::size_t n = panel.num_dates();
    TurbulenceSeries out;
    out.values.assign(n, 0.0);
    // Return rows start at 1, so date t needs rows t-lookback .. t-1 all >= 1.
    out.first_defined = std::min(n, lookback + 1);
    for (std::size_t t = out.first_defined; t < n; ++t) {
        const auto ctx = estimate_context(
            returns.middleRows(static_cast<Eigen::Index>(t - lookback), static_cast<Eigen::Index>(lookback)),
            relative_ridge);
        out.values[t] = turbulence_index(returns.row(static_cast<Eigen::Index>(t)).transpose(), ctx);
    }
    return out;
}

/// Lower empirical quantile: the ceil(q n)-th smallest value.
inline double empirical_quantile(std::vector<double> values, double quantile) {
    if (values.empty()) {
        throw Error(ErrorKind::InsufficientData, "quantile of an empty set");
    }
    if (!(quantile > 0.0 && quantile <= 1.0)) {
        throw Error(ErrorKind::InputInvalid, "quantile must lie in (0, 1]");
    }
    std::sort(values.begin(), values.end());
    const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(values.size()) - 1e-9));
    return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

/// Threshold from the defined values with index in [0, end_exclusive).
inline double calibrate_threshold(const TurbulenceSeries& series, std::size_t end_exclusive, double quantile) {
    const std::size_t end = std::min(end_exclusive, series.values.size());
    if (end <= series.first_defined) {
        throw Error(ErrorKind::InsufficientData, "calibrate_threshold: no defined in-sample turbulence values");
    }
    return empirical_quantile(
        std::vector<double>(series.values.begin() + static_cast<std::ptrdiff_t>(series.first_defined),
                            series.values.begin() + static_cast<std::ptrdiff_t>(end)),
        quantile);
}

}  // namespace ensemble_trader
