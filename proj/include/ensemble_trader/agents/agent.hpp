#pragma once

// Uniform train/act surface over the three learners.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/agents/a2c.hpp"
#include "ensemble_trader/agents/common.hpp"
#include "ensemble_trader/agents/ddpg.hpp"
#include "ensemble_trader/agents/ppo.hpp"

namespace ensemble_trader {

struct TrainedAgent {
    AgentKind kind = AgentKind::PPO;
    std::variant<Ppo, A2c, Ddpg> model;
    AgentConfig config;
    std::uint64_t seed = 0;
    std::string window_id;
    std::size_t steps_trained = 0;
    std::size_t updates = 0;
    std::size_t skipped_updates = 0;
    std::vector<TrainingLogEntry> log;
};

inline TrainedAgent make_agent(AgentKind kind, std::size_t obs_size, std::size_t action_size,
                               const AgentConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    TrainedAgent agent;
    agent.kind = kind;
    agent.config = config;
    agent.seed = seed;
    switch (kind) {
    case AgentKind::PPO: agent.model = Ppo(obs_size, action_size, config, rng); break;
    case AgentKind::A2C: agent.model = A2c(obs_size, action_size, config, rng); break;
    case AgentKind::DDPG: agent.model = Ddpg(obs_size, action_size, config, rng); break;
    }
    return agent;
}

inline std::size_t agent_observation_size(const TrainedAgent& agent) {
    return std::visit(
        [](const auto& m) -> std::size_t {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, Ddpg>) {
                return m.actor().input_size();
            } else {
                return m.model().policy().mean.input_size();
            }
        },
        agent.model);
}

/// Clipped to [-1, 1]. Deterministic mode returns the policy mean (A2C, PPO)
/// or mu(s) (DDPG) and never touches `rng`.
inline Eigen::VectorXd act(const TrainedAgent& agent, const Eigen::VectorXd& obs, ActMode mode, Rng& rng) {
    if (static_cast<std::size_t>(obs.size()) != agent_observation_size(agent)) {
        throw Error(ErrorKind::ShapeError, "act: observation length " + std::to_string(obs.size()) +
                                               " does not match the agent's " +
                                               std::to_string(agent_observation_size(agent)));
    }
    return std::visit([&](const auto& m) { return m.act(obs, mode, rng); }, agent.model);
}

namespace detail {

struct EpisodeTracker {
    double running = 0.0;
    double last_finished = std::numeric_limits<double>::quiet_NaN();
    void add(double reward, bool done) {
        running += reward;
        if (done) {
            last_finished = running;
            running = 0.0;
        }
    }
    double take() {
        const double v = last_finished;
        last_finished = std::numeric_limits<double>::quiet_NaN();
        return v;
    }
};

inline void record(TrainedAgent& agent, const UpdateStats& stats, EpisodeTracker& episodes) {
    ++agent.updates;
    if (stats.skipped) ++agent.skipped_updates;
    agent.log.push_back({agent.steps_trained, stats.actor_objective, stats.critic_loss, episodes.take()});
}

template <Environment Env, class Model>
void train_on_policy(TrainedAgent& agent, Model& model, Env& env, std::size_t total_steps, Rng& rng) {
    const auto& cfg = agent.config;
    std::vector<Transition> rollout;
    rollout.reserve(std::min(cfg.rollout_length, total_steps));
    EpisodeTracker episodes;
    Eigen::VectorXd obs = env.begin_episode();
    std::size_t steps = 0;
    while (steps < total_steps) {
        rollout.clear();
        while (rollout.size() < cfg.rollout_length && steps < total_steps) {
            const auto sample = model.model().sample(obs, rng);
            Feedback fb = env.advance(sample.action.cwiseMax(-1.0).cwiseMin(1.0));
            episodes.add(fb.reward, fb.done);
            rollout.push_back({obs, sample.action, fb.reward, fb.observation, fb.done, sample.log_prob});
            ++steps;
            ++agent.steps_trained;
            obs = fb.done ? env.begin_episode() : std::move(fb.observation);
        }
        UpdateStats stats;
        if constexpr (std::is_same_v<Model, Ppo>) {
            stats = model.update(rollout, cfg.epochs, cfg.batch_size, rng);
        } else {
            stats = model.update(rollout);
        }
        record(agent, stats, episodes);
    }
}

template <Environment Env>
void train_ddpg(TrainedAgent& agent, Ddpg& model, Env& env, std::size_t total_steps, Rng& rng) {
    const auto& cfg = agent.config;
    ReplayBuffer buffer(cfg.replay_capacity);
    EpisodeTracker episodes;
    const std::size_t start_after = std::max(cfg.learning_starts, cfg.batch_size);
    Eigen::VectorXd obs = env.begin_episode();
    UpdateStats last;
    for (std::size_t steps = 0; steps < total_steps; ++steps) {
        const Eigen::VectorXd action = model.act(obs, ActMode::Stochastic, rng);
        Feedback fb = env.advance(action);
        episodes.add(fb.reward, fb.done);
        buffer.push({obs, action, fb.reward, fb.observation, fb.done, 0.0});
        ++agent.steps_trained;
        obs = fb.done ? env.begin_episode() : std::move(fb.observation);
        if (buffer.size() >= start_after) {
            last = model.update(buffer, cfg.batch_size, rng);
            ++agent.updates;
            if (last.skipped) ++agent.skipped_updates;
            if (fb.done) agent.log.push_back({agent.steps_trained, last.actor_objective, last.critic_loss, episodes.take()});
        }
    }
}

}  // namespace detail

/// Runs `steps` more environment steps of the agent's own algorithm.
template <Environment Env>
void continue_training(TrainedAgent& agent, Env& env, std::size_t steps, std::uint64_t seed) {
    Rng rng(seed);
    std::visit(
        [&](auto& model) {
            using M = std::decay_t<decltype(model)>;
            if constexpr (std::is_same_v<M, Ddpg>) {
                detail::train_ddpg(agent, model, env, steps, rng);
            } else {
                detail::train_on_policy(agent, model, env, steps, rng);
            }
        },
        agent.model);
}

/// Trains a fresh agent, or continues from `warm_start` when given, for
/// config.total_steps environment steps. Deterministic in (kind, env, config, seed).
template <Environment Env>
TrainedAgent train_agent(AgentKind kind, Env& env, const AgentConfig& config, std::uint64_t seed,
                         const TrainedAgent* warm_start = nullptr, std::string window_id = {}) {
    TrainedAgent agent;
    if (warm_start) {
        if (warm_start->kind != kind) throw Error(ErrorKind::InputInvalid, "warm start agent has a different kind");
        agent = *warm_start;
        agent.config = config;
        agent.seed = seed;
        agent.log.clear();
    } else {
        agent = make_agent(kind, env.observation_size(), env.action_size(), config, mix_seed(seed));
    }
    agent.window_id = std::move(window_id);
    continue_training(agent, env, config.total_steps, seed);
    return agent;
}

/// FNV-1a over every parameter of every network the agent owns.
inline std::uint64_t parameter_checksum(const TrainedAgent& agent) {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&](const Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            std::uint64_t bits;
            const double x = v(i);
            std::memcpy(&bits, &x, sizeof bits);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xffU;
                h *= 1099511628211ULL;
            }
        }
    };
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, Ddpg>) {
                feed(m.actor().params());
                feed(m.critic().params());
                feed(m.target_actor().params());
                feed(m.target_critic().params());
            } else {
                feed(m.model().policy().mean.params());
                feed(m.model().policy().log_std);
                feed(m.model().critic().params());
            }
        },
        agent.model);
    return h;
}

inline void save_agent(std::ostream& out, const TrainedAgent& agent) {
    CheckpointWriter w(out);
    w.add_meta("kind", std::string(to_string(agent.kind)));
    w.add_meta("seed", std::to_string(agent.seed));
    w.add_meta("window", agent.window_id.empty() ? "-" : agent.window_id);
    w.add_meta("steps_trained", std::to_string(agent.steps_trained));
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, Ddpg>) {
                m.write(w);
            } else {
                m.model().write(w);
            }
        },
        agent.model);
    w.finish();
}

/// Restores networks for acting; optimizer state starts fresh.
inline TrainedAgent load_agent(std::istream& in, const AgentConfig& config = {}) {
    const Checkpoint cp = read_checkpoint(in);
    const auto kind = parse_agent_kind(cp.meta_value("kind"));
    if (!kind) throw Error(ErrorKind::InputInvalid, "checkpoint has unknown agent kind");
    const Mlp& actor = cp.net(*kind == AgentKind::DDPG ? "actor" : "actor.mean");
    TrainedAgent agent = make_agent(*kind, actor.input_size(), actor.output_size(), config, 0);
    agent.seed = std::stoull(cp.meta_value("seed"));
    agent.window_id = cp.meta_value("window");
    agent.steps_trained = std::stoull(cp.meta_value("steps_trained"));
    std::visit(
        [&](auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, Ddpg>) {
                m.read(cp);
            } else {
                m.model().read(cp);
            }
        },
        agent.model);
    return agent;
}

}  // namespace ensemble_trader
