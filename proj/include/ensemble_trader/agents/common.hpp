#pragma once

// Pieces shared by the three actor-critic learners.

#include <algorithm>
#include <cctype>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/error.hpp"
#include "ensemble_trader/neural.hpp"
#include "ensemble_trader/trading_env.hpp"

namespace ensemble_trader {

/// What a learner needs from an environment: fixed observation and action
/// sizes, an episode start and a step returning reward and done.
template <class E>
concept Environment = requires(E& env, const Eigen::VectorXd& action) {
    { env.observation_size() } -> std::convertible_to<std::size_t>;
    { env.action_size() } -> std::convertible_to<std::size_t>;
    { env.begin_episode() } -> std::convertible_to<Eigen::VectorXd>;
    { env.advance(action) } -> std::same_as<Feedback>;
};

enum class AgentKind { PPO, A2C, DDPG };

inline constexpr AgentKind kAllAgentKinds[] = {AgentKind::PPO, AgentKind::A2C, AgentKind::DDPG};

constexpr std::string_view to_string(AgentKind kind) noexcept {
    switch (kind) {
    case AgentKind::PPO: return "PPO";
    case AgentKind::A2C: return "A2C";
    case AgentKind::DDPG: return "DDPG";
    }
    return "?";
}

inline std::optional<AgentKind> parse_agent_kind(std::string_view text) {
    for (auto kind : kAllAgentKinds) {
        const std::string_view name = to_string(kind);
        if (text.size() == name.size() &&
            std::equal(text.begin(), text.end(), name.begin(), [](char a, char b) {
                return std::toupper(static_cast<unsigned char>(a)) == b;
            })) {
            return kind;
        }
    }
    return std::nullopt;
}

enum class ActMode { Stochastic, Deterministic };

struct AgentConfig {
    double gamma = 0.99;
    std::size_t total_steps = 30'000;
    std::size_t rollout_length = 2048;  // A2C and PPO
    std::size_t batch_size = 64;        // DDPG replay batch, PPO minibatch
    std::size_t epochs = 10;            // PPO
    double clip_epsilon = 0.2;          // PPO
    bool normalize_advantages = true;   // PPO
    double max_clip_fraction = 0.01;    // PPO early stop
    double tau = 0.005;                 // DDPG
    double exploration_noise = 0.1;     // DDPG
    std::size_t replay_capacity = 100'000;
    std::size_t learning_starts = 1000;  // DDPG: env steps before the first update
    double actor_lr = 3e-4;
    double critic_lr = 1e-3;
    double initial_std = 0.5;
    std::vector<std::size_t> hidden = {64, 64};

    void validate() const {
        if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorKind::ConfigError, "gamma must lie in (0, 1)");
        if (!(max_clip_fraction >= 0.0 && max_clip_fraction <= 1.0)) {
            throw Error(ErrorKind::ConfigError, "max_clip_fraction must lie in [0, 1]");
        }
        if (!(clip_epsilon > 0.0)) throw Error(ErrorKind::ConfigError, "clip_epsilon must be > 0");
        if (!(tau > 0.0 && tau <= 1.0)) throw Error(ErrorKind::ConfigError, "tau must lie in (0, 1]");
        if (rollout_length == 0 || batch_size == 0) {
            throw Error(ErrorKind::ConfigError, "rollout_length and batch_size must be positive");
        }
        if (replay_capacity < batch_size) throw Error(ErrorKind::ConfigError, "replay_capacity < batch_size");
        if (!(initial_std > 0.0)) throw Error(ErrorKind::ConfigError, "initial_std must be > 0");
    }
};

struct Transition {
    Eigen::VectorXd state;
    Eigen::VectorXd action;  // as taken by the policy (pre-clip for Gaussian policies)
    double reward = 0.0;
    Eigen::VectorXd next_state;
    bool done = false;
    double log_prob = 0.0;
};

/// A(s, a) = r + gamma V(s') - V(s), without bootstrap on terminal steps.
constexpr double advantage(double reward, double gamma, double v_state, double v_next, bool done) noexcept {
    return reward + gamma * v_next * (done ? 0.0 : 1.0) - v_state;
}

/// min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)
constexpr double ppo_clip_objective(double ratio, double adv, double epsilon) noexcept {
    const double clipped = ratio < 1.0 - epsilon ? 1.0 - epsilon : (ratio > 1.0 + epsilon ? 1.0 + epsilon : ratio);
    const double a = ratio * adv;
    const double b = clipped * adv;
    return a < b ? a : b;
}

/// Fixed-capacity ring buffer with uniform sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw Error(ErrorKind::InputInvalid, "replay buffer capacity must be positive");
        items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
    }

    void push(Transition t) {
        if (items_.size() < capacity_) {
            items_.push_back(std::move(t));
        } else {
            items_[next_] = std::move(t);
        }
        next_ = (next_ + 1) % capacity_;
    }

    [[nodiscard]] std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
        if (items_.size() < n || n == 0) {
            throw Error(ErrorKind::BufferUnderflow, "replay buffer holds " + std::to_string(items_.size()) +
                                                        " transitions, batch needs " + std::to_string(n));
        }
        std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
        std::vector<const Transition*> out(n);
        for (auto& p : out) p = &items_[pick(rng)];
        return out;
    }

    [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
    [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
    [[nodiscard]] const Transition& operator[](std::size_t i) const { return items_.at(i); }

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Transition> items_;
};

/// Loss terms from one update.
struct UpdateStats {
    double actor_objective = 0.0;
    double critic_loss = 0.0;
    double mean_advantage = 0.0;
    bool skipped = false;  // non-finite gradient
    bool stopped_early = false;
};

struct TrainingLogEntry {
    std::size_t step = 0;
    double actor_objective = 0.0;
    double critic_loss = 0.0;
    double episode_return = 0.0;  // NaN when no episode finished since the previous entry
};

/// Stacks vectors as columns.
template <class Range, class Get>
Eigen::MatrixXd stack_columns(const Range& items, Get get) {
    const auto n = static_cast<Eigen::Index>(std::size(items));
    if (n == 0) return {};
    const Eigen::VectorXd& first = get(*std::begin(items));
    Eigen::MatrixXd out(first.size(), n);
    Eigen::Index i = 0;
    for (const auto& item : items) out.col(i++) = get(item);
    return out;
}

inline std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return sizes;
}

/// splitmix64 finalizer.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for one (window, agent) pair derived from the root seed.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t window, AgentKind kind) noexcept {
    return mix_seed(mix_seed(mix_seed(root) ^ window) ^ (static_cast<std::uint64_t>(kind) + 1));
}

}  // namespace ensemble_trader
