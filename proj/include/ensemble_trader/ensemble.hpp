#pragma once

// Walk-forward ensemble: each quarter retrain PPO, A2C and DDPG on the growing
// window, score them by validation Sharpe, trade the next quarter with the
// winner. Portfolio state carries over between quarters.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ensemble_trader/agents/agent.hpp"
#include "ensemble_trader/evaluation.hpp"
#include "ensemble_trader/indicators.hpp"
#include "ensemble_trader/market_data.hpp"
#include "ensemble_trader/trading_env.hpp"
#include "ensemble_trader/turbulence.hpp"

namespace ensemble_trader {

using SharpeScores = std::map<AgentKind, std::optional<double>>;

/// Highest defined score wins; ties resolve PPO, then A2C, then DDPG. Undefined
/// scores rank below every defined one. With no defined score, PPO.
inline AgentKind pick_best(const SharpeScores& scores) {
    if (scores.empty()) throw Error(ErrorKind::NoScores, "pick_best: no scores");
    std::optional<AgentKind> best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (auto kind : kAllAgentKinds) {
        const auto it = scores.find(kind);
        if (it == scores.end() || !it->second) continue;
        if (!best || *it->second > best_score) {
            best = kind;
            best_score = *it->second;
        }
    }
    return best.value_or(AgentKind::PPO);
}

inline bool all_undefined(const SharpeScores& scores) {
    for (const auto& [kind, score] : scores) {
        if (score) return false;
    }
    return true;
}

struct TradeRecord {
    Date date;
    std::string asset;
    char side = 'B';  // 'B' buy, 'S' sell
    std::int64_t shares = 0;
    double price = 0.0;
    double cost = 0.0;
};

/// A strategy's running portfolio plus what it produced so far.
struct StrategyRun {
    std::string name;
    EquityCurve curve;
    std::vector<TradeRecord> trades;
    double balance = 0.0;
    std::vector<std::int64_t> holdings;
};

struct QuarterDecision {
    std::size_t window_id = 0;
    WindowTriple window;
    SharpeScores validation_sharpe;
    AgentKind picked = AgentKind::PPO;
    bool fallback = false;  // every score undefined
    double turbulence_threshold = std::numeric_limits<double>::infinity();
    std::size_t max_index_read_before_trade = 0;  // highest date index touched by training or validation
    std::map<AgentKind, std::vector<TrainingLogEntry>> training_logs;
};

struct EnsembleTrace {
    std::vector<QuarterDecision> decisions;
    StrategyRun ensemble;
};

struct WalkForwardConfig {
    EnvConfig env;
    std::map<AgentKind, AgentConfig> agents{
        {AgentKind::PPO, AgentConfig{}}, {AgentKind::A2C, AgentConfig{}}, {AgentKind::DDPG, AgentConfig{}}};
    TurbulenceConfig turbulence;
    std::uint64_t seed = 0;
    double rf_annual = 0.0;
    bool parallel_training = true;
    bool warm_start = true;
    bool single_agent_strategies = true;  // also trade each kind every quarter
};

/// Inputs shared read-only by every environment of a run.
struct MarketContext {
    std::shared_ptr<const PricePanel> panel;
    std::shared_ptr<const FeaturePanel> features;
    std::shared_ptr<const TurbulenceSeries> turbulence;
};

/// Trains one agent for a window. Receives a training environment restricted
/// to the window's train interval and, after the first window, the previous
/// agent of the same kind.
using AgentTrainer = std::function<TrainedAgent(AgentKind kind, TradingEnv& env, const AgentConfig& config,
                                                std::uint64_t seed, const TrainedAgent* previous,
                                                const WindowTriple& window)>;

inline AgentTrainer default_trainer() {
    return [](AgentKind kind, TradingEnv& env, const AgentConfig& config, std::uint64_t seed,
              const TrainedAgent* previous, const WindowTriple& window) {
        return train_agent(kind, env, config, seed, previous, "w" + std::to_string(window.id));
    };
}

/// Runs the agent deterministically over the environment's window from a
/// fresh portfolio and returns the annualized Sharpe of its daily returns.
inline double validate_agent(const TrainedAgent& agent, TradingEnv& env, double rf_annual = 0.0) {
    env.reset();
    Rng unused(0);
    std::vector<double> values{env.state().portfolio_value()};
    while (!env.state().done) {
        const auto action = act(agent, env.observe(), ActMode::Deterministic, unused);
        values.push_back(env.step(ActionVector::clipped(action)).next_state.portfolio_value());
    }
    const auto returns = period_returns(values);
    if (returns.size() < 2) throw Error(ErrorKind::InsufficientData, "validation window shorter than two returns");
    return sharpe(returns, rf_annual);
}

inline std::optional<double> validation_score(const TrainedAgent& agent, TradingEnv& env, double rf_annual) {
    try {
        return validate_agent(agent, env, rf_annual);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::ZeroVolatility) return std::nullopt;
        throw;
    }
}

/// Trades `agent` deterministically from the run's carried portfolio over
/// `env`'s window, appending equity points and trades.
inline void trade_window(StrategyRun& run, const TrainedAgent& agent, TradingEnv& env) {
    env.reset_to(run.balance, run.holdings);
    const auto& panel = env.frames().panel();
    if (run.curve.size() == 0) run.curve.push_back(panel.calendar()[env.state().t], env.state().portfolio_value());
    Rng unused(0);
    while (!env.state().done) {
        const std::size_t t = env.state().t;
        const auto prices = env.state().prices;
        const auto action = act(agent, env.observe(), ActMode::Deterministic, unused);
        const auto result = env.step(ActionVector::clipped(action));
        const double fee = env.config().fee_rate;
        for (std::size_t d = 0; d < panel.num_assets(); ++d) {
            for (const auto& [side, shares] : {std::pair{'S', result.trades.sells[d]}, std::pair{'B', result.trades.buys[d]}}) {
                if (shares > 0) {
                    run.trades.push_back({panel.calendar()[t], panel.assets()[d], side, shares, prices[d],
                                          fee * static_cast<double>(shares) * prices[d]});
                }
            }
        }
        run.curve.push_back(panel.calendar()[result.next_state.t], result.next_state.portfolio_value());
    }
    run.balance = env.state().balance;
    run.holdings = env.state().holdings;
}

struct WalkForwardResult {
    EnsembleTrace trace;
    std::map<AgentKind, StrategyRun> single_agents;
    std::optional<std::string> failure;  // set when a window aborted; outputs hold the partial run
};

using WindowObserver = std::function<void(const WindowTriple&, const std::map<AgentKind, TrainedAgent>&)>;
using Logger = std::function<void(const std::string&)>;

/// Builds the features and turbulence series of a panel.
inline MarketContext make_market_context(std::shared_ptr<const PricePanel> panel, const IndicatorConfig& indicators,
                                         const TurbulenceConfig& turbulence) {
    auto features = std::make_shared<const FeaturePanel>(build_features(*panel, indicators));
    const std::size_t lookback = std::max(turbulence.lookback, panel->num_assets() + 1);
    auto turb = std::make_shared<const TurbulenceSeries>(rolling_turbulence(*panel, lookback, turbulence.ridge));
    return {std::move(panel), std::move(features), std::move(turb)};
}

inline WalkForwardResult run_walk_forward(const MarketContext& market, const WindowPlan& plan,
                                          const WalkForwardConfig& config, AgentTrainer trainer = default_trainer(),
                                          const WindowObserver& on_trained = {}, const Logger& log = {}) {
    if (plan.windows.empty()) throw Error(ErrorKind::InputInvalid, "window plan is empty");
    const std::size_t n_assets = market.panel->num_assets();
    WalkForwardResult result;
    auto fresh_run = [&](std::string name) {
        return StrategyRun{std::move(name), {}, {}, config.env.initial_balance, std::vector<std::int64_t>(n_assets, 0)};
    };
    result.trace.ensemble = fresh_run("ensemble");
    if (config.single_agent_strategies) {
        for (auto kind : kAllAgentKinds) result.single_agents[kind] = fresh_run(std::string(to_string(kind)));
    }
    auto env_for = [&](Interval window, std::optional<double> threshold) {
        return TradingEnv(market.panel, market.features, market.turbulence, config.env, window, threshold);
    };

    std::map<AgentKind, TrainedAgent> previous;
    for (std::size_t w = 0; w < plan.windows.size(); ++w) {
        const WindowTriple& win = plan.windows[w];
        try {
            QuarterDecision decision;
            decision.window_id = win.id;
            decision.window = win;
            try {
                decision.turbulence_threshold =
                    calibrate_threshold(*market.turbulence, win.trade.first, config.turbulence.quantile);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::InsufficientData) throw;
                if (log) log("window " + std::to_string(win.id) + ": no turbulence history, override disabled");
            }
            const std::optional<double> threshold =
                std::isfinite(decision.turbulence_threshold) ? std::optional(decision.turbulence_threshold) : std::nullopt;

            // Step 1: retrain on the growing window.
            std::map<AgentKind, TrainedAgent> trained;
            std::map<AgentKind, std::size_t> reads;
            auto train_one = [&](AgentKind kind) {
                TradingEnv env = env_for(win.train, std::nullopt);
                const auto it = previous.find(kind);
                const TrainedAgent* warm = (config.warm_start && it != previous.end()) ? &it->second : nullptr;
                TrainedAgent agent = trainer(kind, env, config.agents.at(kind),
                                             derive_seed(config.seed, win.id, kind), warm, win);
                return std::pair{std::move(agent), env.frames().max_accessed().value_or(0)};
            };
            if (config.parallel_training) {
                std::map<AgentKind, std::future<std::pair<TrainedAgent, std::size_t>>> jobs;
                for (auto kind : kAllAgentKinds) jobs[kind] = std::async(std::launch::async, train_one, kind);
                for (auto& [kind, job] : jobs) {
                    auto [agent, read] = job.get();
                    trained.emplace(kind, std::move(agent));
                    reads[kind] = read;
                }
            } else {
                for (auto kind : kAllAgentKinds) {
                    auto [agent, read] = train_one(kind);
                    trained.emplace(kind, std::move(agent));
                    reads[kind] = read;
                }
            }

            // Step 2: validate and pick.
            std::size_t max_read = 0;
            for (auto kind : kAllAgentKinds) {
                TradingEnv env = env_for(win.validation, threshold);
                decision.validation_sharpe[kind] = validation_score(trained.at(kind), env, config.rf_annual);
                max_read = std::max({max_read, reads[kind], env.frames().max_accessed().value_or(0)});
                decision.training_logs[kind] = trained.at(kind).log;
            }
            decision.max_index_read_before_trade = max_read;
            if (max_read >= win.trade.first) {
                throw Error(ErrorKind::OutOfRange, "look-ahead: window " + std::to_string(win.id) +
                                                       " read date index " + std::to_string(max_read));
            }
            decision.picked = pick_best(decision.validation_sharpe);
            decision.fallback = all_undefined(decision.validation_sharpe);
            if (decision.fallback && log) {
                log("window " + std::to_string(win.id) + ": every validation Sharpe undefined, falling back to PPO");
            }
            if (on_trained) on_trained(win, trained);

            // Step 3: trade up to the next quarter's first date.
            const std::size_t stop = (w + 1 < plan.windows.size()) ? plan.windows[w + 1].trade.first : win.trade.last;
            if (stop > win.trade.first) {
                const Interval span{win.trade.first, stop};
                TradingEnv env = env_for(span, threshold);
                trade_window(result.trace.ensemble, trained.at(decision.picked), env);
                for (auto& [kind, run] : result.single_agents) {
                    TradingEnv single_env = env_for(span, threshold);
                    trade_window(run, trained.at(kind), single_env);
                }
            }
            if (log) {
                log("window " + std::to_string(win.id) + " " + format_iso_date(plan.date(win.trade.first)) + ".." +
                    format_iso_date(plan.date(win.trade.last)) + ": picked " + std::string(to_string(decision.picked)));
            }
            result.trace.decisions.push_back(std::move(decision));
            previous = std::move(trained);
        } catch (const std::exception& e) {
            result.failure = "window " + std::to_string(win.id) + ": " + e.what();
            if (log) log(*result.failure);
            break;
        }
    }
    return result;
}

/// Ensemble trace only, without the single-agent strategies.
inline EnsembleTrace run_ensemble(const MarketContext& market, const WindowPlan& plan, WalkForwardConfig config,
                                  AgentTrainer trainer = default_trainer()) {
    config.single_agent_strategies = false;
    auto result = run_walk_forward(market, plan, config, std::move(trainer));
    if (result.failure) throw Error(ErrorKind::InputInvalid, *result.failure);
    return std::move(result.trace);
}

}  // namespace ensemble_trader
