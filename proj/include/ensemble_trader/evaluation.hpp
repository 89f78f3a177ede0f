#pragma once

// Performance metrics, the long-only min-variance baseline and the index
// baseline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/date.hpp"
#include "ensemble_trader/error.hpp"
#include "ensemble_trader/market_data.hpp"
#include "ensemble_trader/turbulence.hpp"

namespace ensemble_trader {

inline constexpr double kTradingDaysPerYear = 252.0;

struct EquityCurve {
    std::vector<Date> dates;
    std::vector<double> values;

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    void push_back(const Date& date, double value) {
        dates.push_back(date);
        values.push_back(value);
    }
};

struct MetricsReport {
    double cumulative_return = 0.0;
    double annual_return = 0.0;
    double annual_volatility = 0.0;
    std::optional<double> sharpe;  // empty when volatility is zero
    double max_drawdown = 0.0;
};

inline double cumulative_return(std::span<const double> values) {
    if (values.empty()) throw Error(ErrorKind::InputEmpty, "cumulative_return: empty curve");
    return (values.back() - values.front()) / values.front();
}

inline double annual_return(std::span<const double> values, double periods_per_year = kTradingDaysPerYear) {
    if (values.size() < 2) throw Error(ErrorKind::InputEmpty, "annual_return: need at least two points");
    const double growth = values.back() / values.front();
    return std::pow(growth, periods_per_year / static_cast<double>(values.size() - 1)) - 1.0;
}

inline std::vector<double> period_returns(std::span<const double> values) {
    std::vector<double> r;
    if (values.size() < 2) return r;
    r.reserve(values.size() - 1);
    for (std::size_t t = 1; t < values.size(); ++t) r.push_back(values[t] / values[t - 1] - 1.0);
    return r;
}

namespace detail {
inline double mean_of(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}
inline double sample_stddev(std::span<const double> x, double mean) {
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}
/// Standard deviation that is round-off relative to the mean level counts as zero.
inline bool negligible_spread(double sd, double mean) {
    return sd <= 1e-12 * std::max(std::abs(mean), std::numeric_limits<double>::min()) || sd == 0.0;
}
}  // namespace detail

inline double annual_volatility(std::span<const double> returns, double periods_per_year = kTradingDaysPerYear) {
    if (returns.size() < 2) throw Error(ErrorKind::InsufficientData, "annual_volatility: need at least two returns");
    const double mean = detail::mean_of(returns);
    const double sd = detail::sample_stddev(returns, mean);
    if (detail::negligible_spread(sd, mean)) return 0.0;
    return sd * std::sqrt(periods_per_year);
}

/// (mean * periods_per_year - rf) / (sample std * sqrt(periods_per_year)).
inline double sharpe(std::span<const double> returns, double rf_annual = 0.0,
                     double periods_per_year = kTradingDaysPerYear) {
    const double vol = annual_volatility(returns, periods_per_year);
    if (vol == 0.0) throw Error(ErrorKind::ZeroVolatility, "sharpe: returns have zero volatility");
    return (detail::mean_of(returns) * periods_per_year - rf_annual) / vol;
}

/// min_t (value_t / max_{s<=t} value_s - 1), in (-1, 0] for positive curves.
inline double max_drawdown(std::span<const double> values) {
    if (values.empty()) throw Error(ErrorKind::InputEmpty, "max_drawdown: empty curve");
    double peak = values.front();
    double worst = 0.0;
    for (double v : values) {
        peak = std::max(peak, v);
        worst = std::min(worst, v / peak - 1.0);
    }
    return worst;
}

inline MetricsReport compute_metrics(std::span<const double> values, double rf_annual = 0.0,
                                     double periods_per_year = kTradingDaysPerYear) {
    MetricsReport m;
    m.cumulative_return = cumulative_return(values);
    m.max_drawdown = max_drawdown(values);
    if (values.size() >= 2) m.annual_return = annual_return(values, periods_per_year);
    const auto returns = period_returns(values);
    if (returns.size() >= 2) {
        m.annual_volatility = annual_volatility(returns, periods_per_year);
        if (m.annual_volatility > 0.0) m.sharpe = sharpe(returns, rf_annual, periods_per_year);
    }
    return m;
}

// --------------------------------------------------------------------------
// Min-variance baseline

/// w = Sigma^-1 1 / (1' Sigma^-1 1), then negatives clipped to 0 and the rest
/// renormalized once.
inline Eigen::VectorXd min_variance_weights(const Eigen::MatrixXd& cov, double ridge = 0.0) {
    const auto n = cov.rows();
    if (n == 0 || cov.cols() != n) throw Error(ErrorKind::ShapeError, "min_variance_weights: need a square matrix");
    const Eigen::MatrixXd reg = cov + ridge * Eigen::MatrixXd::Identity(n, n);
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
    const Eigen::VectorXd pivots = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !(pivots.minCoeff() > 1e-14 * pivots.cwiseAbs().maxCoeff())) {
        throw Error(ErrorKind::SingularCovariance, "min_variance_weights: covariance is singular");
    }
    Eigen::VectorXd w = ldlt.solve(Eigen::VectorXd::Ones(n));
    w /= w.sum();
    w = w.cwiseMax(0.0);
    return w / w.sum();
}

struct Rebalance {
    std::size_t t = 0;
    Eigen::VectorXd weights;
};

struct BaselineResult {
    EquityCurve curve;
    std::vector<Rebalance> rebalances;
};

/// Rebalances to long-only min-variance weights on the first trading day of
/// each month of [span.first, span.last], estimating the covariance from the
/// `lookback` returns before that day. Holdings are fractional shares and the
/// portfolio is fully invested; each rebalance pays fee_rate on traded notional.
inline BaselineResult run_min_variance_baseline(const PricePanel& panel, Interval span, std::size_t lookback,
                                                double initial_value, double fee_rate = 0.001,
                                                double relative_ridge = 1e-8) {
    if (span.first < lookback + 1) {
        throw Error(ErrorKind::InsufficientData, "min-variance baseline needs " + std::to_string(lookback + 1) +
                                                     " dates before the first rebalance, have " +
                                                     std::to_string(span.first));
    }
    if (span.last >= panel.num_dates() || span.first > span.last) {
        throw Error(ErrorKind::OutOfRange, "min-variance baseline span outside the panel");
    }
    const std::size_t n = panel.num_assets();
    const Eigen::MatrixXd returns = simple_returns(panel);
    BaselineResult out;
    Eigen::VectorXd holdings = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    auto prices_at = [&](std::size_t t) {
        Eigen::VectorXd p(static_cast<Eigen::Index>(n));
        for (std::size_t d = 0; d < n; ++d) p(static_cast<Eigen::Index>(d)) = panel.price(t, d);
        return p;
    };
    double cash = initial_value;
    for (std::size_t t = span.first; t <= span.last; ++t) {
        const Eigen::VectorXd p = prices_at(t);
        const bool month_start = t == span.first || month_of(panel.calendar()[t]) != month_of(panel.calendar()[t - 1]);
        if (month_start) {
            const auto window = returns.middleRows(static_cast<Eigen::Index>(t - lookback), static_cast<Eigen::Index>(lookback));
            const TurbulenceContext ctx = estimate_context(window, relative_ridge);
            const Eigen::VectorXd w = min_variance_weights(ctx.sigma, ctx.ridge);
            const double value = cash + holdings.dot(p);
            const Eigen::VectorXd target = (w * value).cwiseQuotient(p);
            const double cost = fee_rate * ((target - holdings).cwiseAbs().dot(p));
            holdings = target * ((value - cost) / value);
            cash = 0.0;
            out.rebalances.push_back({t, w});
        }
        out.curve.push_back(panel.calendar()[t], cash + holdings.dot(p));
    }
    return out;
}

// --------------------------------------------------------------------------
// Index baseline

/// Buy-and-hold of an index series over the panel dates in `span`, anchored
/// at initial_value. Every date of the span must be present in the series.
inline EquityCurve run_index_baseline(const std::map<std::chrono::sys_days, double>& index_series,
                                      const PricePanel& panel, Interval span, double initial_value) {
    EquityCurve curve;
    double base = 0.0;
    for (std::size_t t = span.first; t <= span.last; ++t) {
        const auto it = index_series.find(std::chrono::sys_days{panel.calendar()[t]});
        if (it == index_series.end()) {
            throw Error(ErrorKind::InsufficientData, "index series has no value on " + format_iso_date(panel.calendar()[t]));
        }
        if (!(it->second > 0.0)) throw Error(ErrorKind::InputInvalid, "index values must be positive");
        if (t == span.first) base = it->second;
        curve.push_back(panel.calendar()[t], initial_value * it->second / base);
    }
    return curve;
}

/// Price-weighted proxy (sum of adjusted closes, no divisor history).
inline EquityCurve run_index_baseline(const PricePanel& panel, Interval span, double initial_value) {
    if (span.last >= panel.num_dates() || span.first > span.last) {
        throw Error(ErrorKind::InsufficientData, "index proxy span outside the panel");
    }
    std::map<std::chrono::sys_days, double> proxy;
    for (std::size_t t = span.first; t <= span.last; ++t) {
        double sum = 0.0;
        for (std::size_t d = 0; d < panel.num_assets(); ++d) sum += panel.price(t, d);
        proxy[std::chrono::sys_days{panel.calendar()[t]}] = sum;
    }
    return run_index_baseline(proxy, panel, span, initial_value);
}

}  // namespace ensemble_trader
