#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/date.hpp"
#include "ensemble_trader/indicators.hpp"
#include "ensemble_trader/market_data.hpp"
#include "ensemble_trader/trading_env.hpp"
#include "ensemble_trader/turbulence.hpp"

namespace test_support {

namespace et = ensemble_trader;

/// Consecutive calendar days starting at `start` (weekends included; the
/// library never assumes a weekday calendar).
inline std::vector<et::Date> daily_calendar(std::size_t n, et::Date start = std::chrono::year{2020} / 1 / 1) {
    std::vector<et::Date> out;
    std::chrono::sys_days d{start};
    for (std::size_t i = 0; i < n; ++i, d += std::chrono::days{1}) out.emplace_back(d);
    return out;
}

/// Panel whose every bar field equals the given adj_close (flat intraday).
inline et::PricePanel panel_from_prices(const Eigen::MatrixXd& prices,
                                        std::vector<et::Date> calendar = {}) {
    const auto T = static_cast<std::size_t>(prices.rows());
    const auto D = static_cast<std::size_t>(prices.cols());
    if (calendar.empty()) calendar = daily_calendar(T);
    std::vector<std::string> names;
    for (std::size_t d = 0; d < D; ++d) names.push_back("A" + std::to_string(d));
    std::vector<et::Bar> bars;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t d = 0; d < D; ++d) {
            const double p = prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
            bars.push_back({calendar[t], p, p, p, p, p, 1000.0});
        }
    }
    return et::PricePanel(names, calendar, bars);
}

/// Random-walk prices with OHLC spread, deterministic in seed.
inline et::PricePanel random_panel(std::size_t T, std::size_t D, std::uint64_t seed, double vol = 0.02) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto calendar = daily_calendar(T);
    std::vector<std::string> names;
    for (std::size_t d = 0; d < D; ++d) names.push_back("R" + std::to_string(d));
    std::vector<double> price(D, 100.0);
    std::vector<et::Bar> bars;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t d = 0; d < D; ++d) {
            const double open = price[d];
            if (t > 0) price[d] *= std::exp(vol * normal(rng));
            const double close = price[d];
            et::Bar b{calendar[t], open, std::max(open, close) * (1.0 + 0.01 * unit(rng)),
                      std::min(open, close) * (1.0 - 0.01 * unit(rng)), close, close, 1000.0};
            bars.push_back(b);
        }
    }
    return et::PricePanel(names, calendar, bars);
}

struct EnvFixture {
    std::shared_ptr<const et::PricePanel> panel;
    std::shared_ptr<const et::FeaturePanel> features;
    std::shared_ptr<const et::TurbulenceSeries> turbulence;

    explicit EnvFixture(et::PricePanel p, std::size_t lookback = 0)
        : panel(std::make_shared<const et::PricePanel>(std::move(p))),
          features(std::make_shared<const et::FeaturePanel>(et::build_features(*panel, {}))) {
        if (lookback > 0) {
            turbulence = std::make_shared<const et::TurbulenceSeries>(et::rolling_turbulence(*panel, lookback, 1e-8));
        }
    }

    /// Turbulence series with the given values (first_defined 0).
    void set_turbulence(std::vector<double> values) {
        et::TurbulenceSeries s;
        s.values = std::move(values);
        s.first_defined = 0;
        turbulence = std::make_shared<const et::TurbulenceSeries>(std::move(s));
    }

    [[nodiscard]] et::TradingEnv env(et::EnvConfig cfg = {}, std::optional<et::Interval> window = std::nullopt,
                                     std::optional<double> threshold = std::nullopt) const {
        const et::Interval w = window.value_or(et::Interval{0, panel->num_dates() - 1});
        return et::TradingEnv(panel, features, turbulence, cfg, w, threshold);
    }
};

}  // namespace test_support
