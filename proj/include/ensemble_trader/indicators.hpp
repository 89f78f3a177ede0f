#pragma once

// MACD, RSI, CCI and ADX per asset. Every series has the input's length;
// indices before an indicator is defined carry a neutral fill value.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/error.hpp"
#include "ensemble_trader/market_data.hpp"

namespace ensemble_trader {

struct IndicatorConfig {
    int macd_fast = 12;
    int macd_slow = 26;
    int macd_signal = 9;  // kept for config compatibility, the state uses the MACD line
    int rsi_period = 14;
    int cci_period = 14;
    int adx_period = 14;
};

inline constexpr double kRsiFill = 50.0;

namespace detail {

inline void require_nonempty(std::span<const double> s, const char* what) {
    if (s.empty()) throw Error(ErrorKind::InputEmpty, std::string(what) + ": empty series");
}

inline void require_period(int period, const char* what) {
    if (period < 1) throw Error(ErrorKind::InputInvalid, std::string(what) + ": period must be >= 1");
}

inline void require_same_length(std::span<const double> a, std::span<const double> b,
                                std::span<const double> c, const char* what) {
    if (a.size() != b.size() || a.size() != c.size()) {
        throw Error(ErrorKind::ShapeError, std::string(what) + ": high/low/close length mismatch");
    }
}

/// EMA with alpha = 2/(n+1), seeded with the first observation.
inline std::vector<double> ema(std::span<const double> x, int n) {
    std::vector<double> out(x.size());
    const double alpha = 2.0 / (n + 1.0);
    out[0] = x[0];
    for (std::size_t t = 1; t < x.size(); ++t) {
        out[t] = out[t - 1] + alpha * (x[t] - out[t - 1]);
    }
    return out;
}

}  // namespace detail

inline std::vector<double> macd(std::span<const double> close, int fast, int slow, int /*signal*/ = 9) {
    detail::require_nonempty(close, "macd");
    if (fast <= 0 || fast >= slow) {
        throw Error(ErrorKind::InputInvalid, "macd: need 0 < fast < slow");
    }
    const auto fast_ema = detail::ema(close, fast);
    const auto slow_ema = detail::ema(close, slow);
    std::vector<double> out(close.size());
    for (std::size_t t = 0; t < close.size(); ++t) out[t] = fast_ema[t] - slow_ema[t];
    return out;
}

/// Wilder RSI. The first `period` entries hold 50. With no losses the value is
/// 100, with neither gains nor losses it stays 50.
inline std::vector<double> rsi(std::span<const double> close, int period) {
    detail::require_nonempty(close, "rsi");
    detail::require_period(period, "rsi");
    const std::size_t n = close.size();
    const auto p = static_cast<std::size_t>(period);
    std::vector<double> out(n, kRsiFill);
    if (n <= p) return out;

    auto value = [](double gain, double loss) {
        if (loss <= 0.0) return gain > 0.0 ? 100.0 : kRsiFill;
        return 100.0 - 100.0 / (1.0 + gain / loss);
    };
    double gain = 0.0;
    double loss = 0.0;
    for (std::size_t t = 1; t <= p; ++t) {
        const double change = close[t] - close[t - 1];
        gain += std::max(change, 0.0);
        loss += std::max(-change, 0.0);
    }
    gain /= period;
    loss /= period;
    out[p] = value(gain, loss);
    for (std::size_t t = p + 1; t < n; ++t) {
        const double change = close[t] - close[t - 1];
        gain = (gain * (period - 1) + std::max(change, 0.0)) / period;
        loss = (loss * (period - 1) + std::max(-change, 0.0)) / period;
        out[t] = value(gain, loss);
    }
    return out;
}

/// CCI over a trailing window of typical prices. Zero mean deviation (up to
/// round-off relative to the price level) yields 0; warmup entries are 0.
inline std::vector<double> cci(std::span<const double> high, std::span<const double> low,
                               std::span<const double> close, int period) {
    detail::require_nonempty(close, "cci");
    detail::require_period(period, "cci");
    detail::require_same_length(high, low, close, "cci");
    const std::size_t n = close.size();
    const auto p = static_cast<std::size_t>(period);
    std::vector<double> tp(n);
    for (std::size_t t = 0; t < n; ++t) tp[t] = (high[t] + low[t] + close[t]) / 3.0;

    std::vector<double> out(n, 0.0);
    for (std::size_t t = p - 1; t < n; ++t) {
        const auto window = std::span<const double>(tp).subspan(t + 1 - p, p);
        double sma = 0.0;
        for (double v : window) sma += v;
        sma /= period;
        double mad = 0.0;
        for (double v : window) mad += std::abs(v - sma);
        mad /= period;
        if (mad <= 1e-12 * std::abs(sma)) continue;
        out[t] = (tp[t] - sma) / (0.015 * mad);
    }
    return out;
}

/// Wilder ADX. Smoothed +DM, -DM and true range use Wilder's running sum,
/// ADX is the Wilder average of DX. Entries before index 2*period-1 are 0.
inline std::vector<double> adx(std::span<const double> high, std::span<const double> low,
                               std::span<const double> close, int period) {
    detail::require_nonempty(close, "adx");
    detail::require_period(period, "adx");
    detail::require_same_length(high, low, close, "adx");
    const std::size_t n = close.size();
    const auto p = static_cast<std::size_t>(period);
    std::vector<double> out(n, 0.0);
    if (n < 2 * p) return out;

    double s_plus = 0.0;
    double s_minus = 0.0;
    double s_tr = 0.0;
    auto dx = [&] {
        if (s_tr <= 0.0) return 0.0;
        const double plus_di = 100.0 * s_plus / s_tr;
        const double minus_di = 100.0 * s_minus / s_tr;
        const double sum = plus_di + minus_di;
        return sum > 0.0 ? 100.0 * std::abs(plus_di - minus_di) / sum : 0.0;
    };
    auto movement = [&](std::size_t t, double& plus, double& minus, double& tr) {
        const double up = high[t] - high[t - 1];
        const double down = low[t - 1] - low[t];
        plus = (up > down && up > 0.0) ? up : 0.0;
        minus = (down > up && down > 0.0) ? down : 0.0;
        tr = std::max({high[t] - low[t], std::abs(high[t] - close[t - 1]), std::abs(low[t] - close[t - 1])});
    };

    double plus = 0.0, minus = 0.0, tr = 0.0;
    for (std::size_t t = 1; t <= p; ++t) {
        movement(t, plus, minus, tr);
        s_plus += plus;
        s_minus += minus;
        s_tr += tr;
    }
    double dx_sum = dx();
    for (std::size_t t = p + 1; t < 2 * p; ++t) {
        movement(t, plus, minus, tr);
        s_plus += plus - s_plus / period;
        s_minus += minus - s_minus / period;
        s_tr += tr - s_tr / period;
        dx_sum += dx();
    }
    double value = dx_sum / period;
    out[2 * p - 1] = value;
    for (std::size_t t = 2 * p; t < n; ++t) {
        movement(t, plus, minus, tr);
        s_plus += plus - s_plus / period;
        s_minus += minus - s_minus / period;
        s_tr += tr - s_tr / period;
        value = (value * (period - 1) + dx()) / period;
        out[t] = value;
    }
    return out;
}

/// The four T x D indicator blocks of the observation.
struct FeaturePanel {
    Eigen::MatrixXd macd;
    Eigen::MatrixXd rsi;
    Eigen::MatrixXd cci;
    Eigen::MatrixXd adx;
    std::size_t warmup_len = 0;

    [[nodiscard]] std::size_t num_dates() const noexcept { return static_cast<std::size_t>(macd.rows()); }
    [[nodiscard]] std::size_t num_assets() const noexcept { return static_cast<std::size_t>(macd.cols()); }
};

inline FeaturePanel build_features(const PricePanel& panel, const IndicatorConfig& config = {}) {
    const auto rows = static_cast<Eigen::Index>(panel.num_dates());
    const auto cols = static_cast<Eigen::Index>(panel.num_assets());
    FeaturePanel out{Eigen::MatrixXd(rows, cols), Eigen::MatrixXd(rows, cols), Eigen::MatrixXd(rows, cols),
                     Eigen::MatrixXd(rows, cols), 0};
    auto store = [](Eigen::MatrixXd& block, Eigen::Index d, const std::vector<double>& values) {
        block.col(d) = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    };
    for (std::size_t d = 0; d < panel.num_assets(); ++d) {
        const auto adj = panel.column(d, &Bar::adj_close);
        const auto high = panel.column(d, &Bar::high);
        const auto low = panel.column(d, &Bar::low);
        const auto close = panel.column(d, &Bar::close);
        const auto col = static_cast<Eigen::Index>(d);
        store(out.macd, col, macd(adj, config.macd_fast, config.macd_slow, config.macd_signal));
        store(out.rsi, col, rsi(adj, config.rsi_period));
        store(out.cci, col, cci(high, low, close, config.cci_period));
        store(out.adx, col, adx(high, low, close, config.adx_period));
    }
    out.warmup_len = static_cast<std::size_t>(
        std::max({config.rsi_period, config.cci_period - 1, 2 * config.adx_period - 1}));
    return out;
}

}  // namespace ensemble_trader
