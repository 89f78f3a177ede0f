#pragma once

// Seeded synthetic OHLCV market on a weekday calendar, used for smoke runs
// and tests.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "ensemble_trader/date.hpp"
#include "ensemble_trader/market_data.hpp"

namespace ensemble_trader {

struct SyntheticMarketConfig {
    std::size_t assets = 3;
    std::size_t days = 600;
    Date start = std::chrono::year{2016} / std::chrono::January / 4;
    double daily_drift = 0.0003;
    double daily_vol = 0.015;
    double initial_price = 50.0;
    std::uint64_t seed = 7;
};

/// Geometric Brownian paths with per-asset drift and volatility jitter;
/// open/high/low are drawn around the close. Weekends are skipped.
inline PricePanel make_synthetic_panel(const SyntheticMarketConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<Date> calendar;
    calendar.reserve(cfg.days);
    for (std::chrono::sys_days d{cfg.start}; calendar.size() < cfg.days; d += std::chrono::days{1}) {
        const std::chrono::weekday wd{d};
        if (wd != std::chrono::Saturday && wd != std::chrono::Sunday) calendar.emplace_back(d);
    }

    std::vector<std::string> names;
    std::vector<double> drift, vol, price;
    for (std::size_t a = 0; a < cfg.assets; ++a) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "SYN%02zu", a);
        names.emplace_back(buf);
        drift.push_back(cfg.daily_drift * (0.5 + unit(rng)));
        vol.push_back(cfg.daily_vol * (0.75 + 0.5 * unit(rng)));
        price.push_back(cfg.initial_price * (0.5 + unit(rng)));
    }

    std::vector<Bar> bars;
    bars.reserve(cfg.days * cfg.assets);
    for (std::size_t t = 0; t < cfg.days; ++t) {
        for (std::size_t a = 0; a < cfg.assets; ++a) {
            const double prev = price[a];
            if (t > 0) price[a] = prev * std::exp(drift[a] - 0.5 * vol[a] * vol[a] + vol[a] * normal(rng));
            const double close = price[a];
            const double open = t > 0 ? prev : close;
            const double spread = vol[a] * (0.2 + unit(rng));
            Bar b;
            b.date = calendar[t];
            b.open = open;
            b.close = close;
            b.adj_close = close;
            b.high = std::max(open, close) * (1.0 + 0.5 * spread * unit(rng));
            b.low = std::min(open, close) * (1.0 - 0.5 * spread * unit(rng));
            b.volume = std::round(1e6 * (0.5 + unit(rng)));
            bars.push_back(b);
        }
    }
    return PricePanel(std::move(names), std::move(calendar), std::move(bars));
}

/// Long-format CSV readable by load_bars with the default schema.
inline void write_bars_csv(std::ostream& out, const PricePanel& panel) {
    out << "date,tic,open,high,low,close,adjcp,volume\n";
    char buf[256];
    for (std::size_t t = 0; t < panel.num_dates(); ++t) {
        for (std::size_t d = 0; d < panel.num_assets(); ++d) {
            const Bar& b = panel.bar(t, d);
            std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          format_iso_date(b.date).c_str(), panel.assets()[d].c_str(), b.open, b.high, b.low, b.close,
                          b.adj_close, b.volume);
            out << buf;
        }
    }
}

}  // namespace ensemble_trader
