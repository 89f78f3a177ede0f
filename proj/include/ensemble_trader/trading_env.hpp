#pragma once

// Multi-stock trading MDP: integer share trades under a non-negative balance,
// proportional transaction costs, turbulence-triggered liquidation and the
// 1 + 6D observation vector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/error.hpp"
#include "ensemble_trader/indicators.hpp"
#include "ensemble_trader/market_data.hpp"
#include "ensemble_trader/turbulence.hpp"

namespace ensemble_trader {

struct ObservationScaling {
    double price = 100.0;
    double macd = 100.0;
    double rsi = 100.0;
    double cci = 250.0;
    double adx = 100.0;
};

struct EnvConfig {
    double initial_balance = 1'000'000.0;
    std::int64_t h_max = 100;
    double fee_rate = 0.001;
    double reward_scale = 1e-4;
    ObservationScaling obs_scaling;
};

struct EnvState {
    std::size_t t = 0;
    double balance = 0.0;
    std::vector<std::int64_t> holdings;
    std::vector<double> prices;
    bool done = false;

    [[nodiscard]] double portfolio_value() const {
        double value = balance;
        for (std::size_t d = 0; d < prices.size(); ++d) value += prices[d] * static_cast<double>(holdings[d]);
        return value;
    }
    bool operator==(const EnvState&) const = default;
};

struct ActionVector {
    std::vector<double> raw;
    bool liquidate_all = false;  // set by the turbulence override

    /// Copies `values` clipping each component to [-1, 1]; NaN maps to 0.
    static ActionVector clipped(std::span<const double> values) {
        ActionVector a;
        a.raw.resize(values.size());
        for (std::size_t d = 0; d < values.size(); ++d) {
            a.raw[d] = std::isnan(values[d]) ? 0.0 : std::clamp(values[d], -1.0, 1.0);
        }
        return a;
    }
    static ActionVector clipped(const Eigen::VectorXd& values) {
        return clipped(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
    }
    static ActionVector hold(std::size_t assets) { return ActionVector{std::vector<double>(assets, 0.0), false}; }
};

/// Shares to sell and buy per asset. An asset is in the sell set when
/// sells[d] > 0, in the buy set when buys[d] > 0, otherwise held.
struct TradePlan {
    std::vector<std::int64_t> sells;
    std::vector<std::int64_t> buys;

    [[nodiscard]] bool holds(std::size_t d) const { return sells[d] == 0 && buys[d] == 0; }
    [[nodiscard]] bool empty() const {
        return std::all_of(sells.begin(), sells.end(), [](auto k) { return k == 0; }) &&
               std::all_of(buys.begin(), buys.end(), [](auto k) { return k == 0; });
    }
};

struct RewardComponents {
    double hold = 0.0;  // r_H: price change on shares held at t
    double sell = 0.0;  // r_S: price change on shares sold
    double buy = 0.0;   // r_B: price change on shares bought
};

struct StepResult {
    EnvState next_state;
    TradePlan trades;
    double reward = 0.0;           // scaled
    double unscaled_reward = 0.0;  // portfolio value change net of cost
    double cost = 0.0;
    double sell_notional = 0.0;
    double buy_notional = 0.0;
    RewardComponents components;
    bool turbulence_triggered = false;
};

/// Desired shares per asset are raw * h_max truncated toward zero. Sells are
/// capped at holdings; buys are filled in ascending asset order, each capped
/// so the balance (after sell proceeds and all fees) stays non-negative.
inline TradePlan resolve_action(const EnvState& state, const ActionVector& action, std::int64_t h_max,
                                double fee_rate) {
    const std::size_t n = state.holdings.size();
    if (action.raw.size() != n && !action.liquidate_all) {
        throw Error(ErrorKind::ShapeError, "resolve_action: action length does not match asset count");
    }
    TradePlan plan{std::vector<std::int64_t>(n, 0), std::vector<std::int64_t>(n, 0)};
    if (action.liquidate_all) {
        plan.sells = state.holdings;
        return plan;
    }
    double balance = state.balance;
    std::vector<std::int64_t> requested(n, 0);
    for (std::size_t d = 0; d < n; ++d) {
        const double raw = std::isnan(action.raw[d]) ? 0.0 : std::clamp(action.raw[d], -1.0, 1.0);
        const auto desired = static_cast<std::int64_t>(std::trunc(raw * static_cast<double>(h_max)));
        if (desired < 0) {
            plan.sells[d] = std::min(-desired, state.holdings[d]);
            balance += static_cast<double>(plan.sells[d]) * state.prices[d] * (1.0 - fee_rate);
        } else {
            requested[d] = desired;
        }
    }
    for (std::size_t d = 0; d < n; ++d) {
        if (requested[d] == 0) continue;
        const double unit = state.prices[d] * (1.0 + fee_rate);
        auto k = std::min<std::int64_t>(requested[d], static_cast<std::int64_t>(std::floor(balance / unit)));
        while (k > 0 && static_cast<double>(k) * unit > balance) --k;
        if (k <= 0) continue;
        plan.buys[d] = k;
        balance -= static_cast<double>(k) * unit;
    }
    return plan;
}

/// Above the threshold every holding is sold and nothing is bought.
inline ActionVector apply_turbulence_override(const EnvState& state, const ActionVector& action,
                                              double turbulence_value, double threshold) {
    if (turbulence_value > threshold) {
        return ActionVector{std::vector<double>(state.holdings.size(), -1.0), true};
    }
    return action;
}

/// Observation length for D assets.
constexpr std::size_t observation_size(std::size_t assets) noexcept { return 1 + 6 * assets; }

/// Reward, observation and done flag returned to a learner.
struct Feedback {
    Eigen::VectorXd observation;
    double reward = 0.0;
    bool done = false;
};

/// One trading episode over an index window of a shared panel. The agent acts
/// at dates window.first .. window.last - 1 and the episode ends at window.last.
class TradingEnv {
public:
    TradingEnv(std::shared_ptr<const PricePanel> panel, std::shared_ptr<const FeaturePanel> features,
               std::shared_ptr<const TurbulenceSeries> turbulence, EnvConfig config, Interval window,
               std::optional<double> turbulence_threshold = std::nullopt)
        : frames_(std::move(panel)),
          features_(std::move(features)),
          turbulence_(std::move(turbulence)),
          config_(config),
          window_(window),
          threshold_(turbulence_threshold) {
        const auto& p = frames_.panel();
        if (window_.last >= p.num_dates() || window_.first >= window_.last) {
            throw Error(ErrorKind::InsufficientData, "trading window needs at least one step inside the panel");
        }
        if (!features_ || features_->num_dates() != p.num_dates() || features_->num_assets() != p.num_assets()) {
            throw Error(ErrorKind::ShapeError, "feature panel is not aligned with the price panel");
        }
        if (turbulence_ && turbulence_->values.size() != p.num_dates()) {
            throw Error(ErrorKind::ShapeError, "turbulence series is not aligned with the price panel");
        }
        if (!(config_.initial_balance > 0.0) || config_.h_max < 1 || config_.fee_rate < 0.0) {
            throw Error(ErrorKind::InputInvalid, "env config needs initial_balance > 0, h_max >= 1, fee_rate >= 0");
        }
        reset();
    }

    const EnvState& reset() {
        return reset_to(config_.initial_balance, std::vector<std::int64_t>(num_assets(), 0));
    }

    /// Starts the window from an existing portfolio (carried across quarters).
    const EnvState& reset_to(double balance, std::vector<std::int64_t> holdings) {
        if (holdings.size() != num_assets() || balance < 0.0) {
            throw Error(ErrorKind::InputInvalid, "reset_to: invalid starting portfolio");
        }
        state_.t = window_.first;
        state_.balance = balance;
        state_.holdings = std::move(holdings);
        state_.prices = frames_.frame_at(window_.first).prices;
        state_.done = false;
        return state_;
    }

    StepResult step(const ActionVector& action) {
        if (state_.done) throw Error(ErrorKind::EpisodeFinished, "step on a finished episode");
        StepResult result;
        ActionVector effective = action;
        if (threshold_ && turbulence_) {
            const double value = turbulence_->values[state_.t];
            result.turbulence_triggered = value > *threshold_;
            effective = apply_turbulence_override(state_, action, value, *threshold_);
        }
        result.trades = resolve_action(state_, effective, config_.h_max, config_.fee_rate);

        const auto& now = state_.prices;
        const auto& next = frames_.frame_at(state_.t + 1).prices;
        const double value_before = state_.portfolio_value();
        EnvState s = state_;
        for (std::size_t d = 0; d < num_assets(); ++d) {
            const auto sold = result.trades.sells[d];
            const double change = next[d] - now[d];
            result.components.hold += change * static_cast<double>(state_.holdings[d]);
            if (sold > 0) {
                const double notional = static_cast<double>(sold) * now[d];
                result.sell_notional += notional;
                s.balance += notional * (1.0 - config_.fee_rate);
                s.holdings[d] -= sold;
                result.components.sell += change * static_cast<double>(sold);
            }
        }
        for (std::size_t d = 0; d < num_assets(); ++d) {
            const auto bought = result.trades.buys[d];
            if (bought > 0) {
                const double notional = static_cast<double>(bought) * now[d];
                result.buy_notional += notional;
                s.balance -= static_cast<double>(bought) * (now[d] * (1.0 + config_.fee_rate));
                s.holdings[d] += bought;
                result.components.buy += (next[d] - now[d]) * static_cast<double>(bought);
            }
        }
        result.cost = config_.fee_rate * (result.sell_notional + result.buy_notional);
        s.t = state_.t + 1;
        s.prices = next;
        s.done = s.t >= window_.last;

        result.unscaled_reward = s.portfolio_value() - value_before;
        result.reward = result.unscaled_reward * config_.reward_scale;
        state_ = s;
        result.next_state = state_;
        return result;
    }

    [[nodiscard]] Eigen::VectorXd observe() const { return observe(state_); }

    [[nodiscard]] Eigen::VectorXd observe(const EnvState& s) const {
        const auto n = static_cast<Eigen::Index>(num_assets());
        const auto& sc = config_.obs_scaling;
        const auto t = static_cast<Eigen::Index>(s.t);
        Eigen::VectorXd obs(1 + 6 * n);
        obs(0) = s.balance / config_.initial_balance;
        for (Eigen::Index d = 0; d < n; ++d) {
            const auto dd = static_cast<std::size_t>(d);
            obs(1 + d) = s.prices[dd] / sc.price;
            obs(1 + n + d) = static_cast<double>(s.holdings[dd]) / static_cast<double>(config_.h_max);
            obs(1 + 2 * n + d) = features_->macd(t, d) / sc.macd;
            obs(1 + 3 * n + d) = features_->rsi(t, d) / sc.rsi;
            obs(1 + 4 * n + d) = features_->cci(t, d) / sc.cci;
            obs(1 + 5 * n + d) = features_->adx(t, d) / sc.adx;
        }
        return obs;
    }

    // Learner-facing interface.
    [[nodiscard]] std::size_t observation_size() const noexcept { return ensemble_trader::observation_size(num_assets()); }
    [[nodiscard]] std::size_t action_size() const noexcept { return num_assets(); }
    Eigen::VectorXd begin_episode() {
        reset();
        return observe();
    }
    Feedback advance(const Eigen::VectorXd& action) {
        const auto r = step(ActionVector::clipped(action));
        return {observe(), r.reward, r.next_state.done};
    }

    [[nodiscard]] const EnvState& state() const noexcept { return state_; }
    [[nodiscard]] const EnvConfig& config() const noexcept { return config_; }
    [[nodiscard]] const Interval& window() const noexcept { return window_; }
    [[nodiscard]] std::size_t num_assets() const noexcept { return frames_.panel().num_assets(); }
    [[nodiscard]] const FrameSource& frames() const noexcept { return frames_; }
    [[nodiscard]] std::optional<double> threshold() const noexcept { return threshold_; }
    [[nodiscard]] double turbulence_at(std::size_t t) const { return turbulence_ ? turbulence_->values.at(t) : 0.0; }

private:
    FrameSource frames_;
    std::shared_ptr<const FeaturePanel> features_;
    std::shared_ptr<const TurbulenceSeries> turbulence_;
    EnvConfig config_;
    Interval window_;
    std::optional<double> threshold_;
    EnvState state_;
};

}  // namespace ensemble_trader
