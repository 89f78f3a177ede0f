#pragma once

// Gaussian-policy actor with a state-value critic, and the synchronous
// advantage actor-critic update on top of it.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/agents/common.hpp"
#include "ensemble_trader/neural.hpp"

namespace ensemble_trader {

/// Policy pi(a|s) plus critic V(s). Shared by A2C and PPO.
class GaussianActorCritic {
public:
    GaussianActorCritic() = default;
    GaussianActorCritic(std::size_t obs_size, std::size_t action_size, const AgentConfig& config, Rng& rng)
        : policy_(GaussianPolicy::create(layer_sizes(obs_size, config.hidden, action_size), config.initial_std, rng)),
          critic_(Mlp::glorot(layer_sizes(obs_size, config.hidden, 1), rng)) {
        reset_optimizers(config);
    }

    void reset_optimizers(const AgentConfig& config) {
        policy_opt_ = Adam(policy_.mean.params().size(), {config.actor_lr});
        log_std_opt_ = Adam(policy_.log_std.size(), {config.actor_lr});
        critic_opt_ = Adam(critic_.params().size(), {config.critic_lr});
    }

    [[nodiscard]] Eigen::VectorXd act(const Eigen::VectorXd& obs, ActMode mode, Rng& rng) const {
        const Eigen::VectorXd a = mode == ActMode::Deterministic ? policy_.mean.forward(obs)
                                                                 : gaussian_sample(policy_, obs, rng).action;
        return a.cwiseMax(-1.0).cwiseMin(1.0);
    }

    [[nodiscard]] GaussianSample sample(const Eigen::VectorXd& obs, Rng& rng) const {
        return gaussian_sample(policy_, obs, rng);
    }

    [[nodiscard]] Eigen::VectorXd values(const Eigen::MatrixXd& states) const {
        return critic_.forward_batch(states).row(0).transpose();
    }

    /// One Adam step on mean((target - V(s))^2); returns the loss before the step.
    double fit_critic(const Eigen::MatrixXd& states, const Eigen::VectorXd& targets) {
        MlpCache cache;
        const Eigen::RowVectorXd v = critic_.forward_batch(states, &cache).row(0);
        const Eigen::RowVectorXd err = v - targets.transpose();
        const double n = static_cast<double>(states.cols());
        const double loss = err.squaredNorm() / n;
        const Eigen::MatrixXd upstream = (2.0 / n) * err;
        critic_opt_.step(critic_.params(), critic_.backward(cache, upstream).params);
        return loss;
    }

    /// Gradient-ascent step on an objective with the given policy gradient.
    void ascend_policy(const PolicyGradient& grad) {
        // Validate both before touching either optimizer.
        if (!grad.mean_params.allFinite() || !grad.log_std.allFinite()) {
            throw Error(ErrorKind::GradInvalid, "non-finite policy gradient, update skipped");
        }
        policy_opt_.step(policy_.mean.params(), -grad.mean_params);
        log_std_opt_.step(policy_.log_std, -grad.log_std);
        policy_.clamp();
    }

    void write(CheckpointWriter& out) const {
        out.add("actor.mean", policy_.mean);
        out.add("actor.log_std", policy_.log_std);
        out.add("critic", critic_);
    }
    void read(const Checkpoint& cp) {
        policy_.mean = cp.net("actor.mean");
        policy_.log_std = cp.vector("actor.log_std");
        critic_ = cp.net("critic");
    }

    [[nodiscard]] GaussianPolicy& policy() noexcept { return policy_; }
    [[nodiscard]] const GaussianPolicy& policy() const noexcept { return policy_; }
    [[nodiscard]] Mlp& critic() noexcept { return critic_; }
    [[nodiscard]] const Mlp& critic() const noexcept { return critic_; }

private:
    GaussianPolicy policy_;
    Mlp critic_;
    Adam policy_opt_;
    Adam log_std_opt_;
    Adam critic_opt_;
};

/// Batch view of a rollout: columns are transitions.
struct RolloutBatch {
    Eigen::MatrixXd states;
    Eigen::MatrixXd actions;
    Eigen::MatrixXd next_states;
    Eigen::VectorXd rewards;
    Eigen::VectorXd done;  // 1 for terminal
    Eigen::VectorXd log_probs;

    static RolloutBatch from(std::span<const Transition> rollout) {
        RolloutBatch b;
        b.states = stack_columns(rollout, [](const Transition& t) -> const Eigen::VectorXd& { return t.state; });
        b.actions = stack_columns(rollout, [](const Transition& t) -> const Eigen::VectorXd& { return t.action; });
        b.next_states =
            stack_columns(rollout, [](const Transition& t) -> const Eigen::VectorXd& { return t.next_state; });
        const auto n = static_cast<Eigen::Index>(rollout.size());
        b.rewards.resize(n);
        b.done.resize(n);
        b.log_probs.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& t = rollout[static_cast<std::size_t>(i)];
            b.rewards(i) = t.reward;
            b.done(i) = t.done ? 1.0 : 0.0;
            b.log_probs(i) = t.log_prob;
        }
        return b;
    }
    [[nodiscard]] Eigen::Index size() const noexcept { return states.cols(); }
};

/// One-step advantages r + gamma V(s') (1 - done) - V(s) and the matching
/// critic targets, both computed with the current critic.
struct AdvantageEstimate {
    Eigen::VectorXd advantages;
    Eigen::VectorXd targets;
};

inline AdvantageEstimate estimate_advantages(const GaussianActorCritic& model, const RolloutBatch& batch,
                                             double gamma) {
    const Eigen::VectorXd v = model.values(batch.states);
    const Eigen::VectorXd v_next = model.values(batch.next_states);
    AdvantageEstimate e{Eigen::VectorXd(batch.size()), Eigen::VectorXd(batch.size())};
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        const bool done = batch.done(i) > 0.5;
        e.advantages(i) = advantage(batch.rewards(i), gamma, v(i), v_next(i), done);
        e.targets(i) = batch.rewards(i) + gamma * (done ? 0.0 : v_next(i));
    }
    return e;
}

/// mean_i log pi(a_i|s_i) A_i with A held fixed, and its policy gradient.
struct PolicyObjective {
    double value = 0.0;
    PolicyGradient gradient;
};

inline PolicyObjective policy_gradient_objective(const GaussianPolicy& policy, const Eigen::MatrixXd& states,
                                                 const Eigen::MatrixXd& actions, const Eigen::VectorXd& advantages) {
    const double n = static_cast<double>(states.cols());
    const Eigen::MatrixXd means = policy.mean.forward_batch(states);
    double value = 0.0;
    for (Eigen::Index i = 0; i < states.cols(); ++i) {
        value += gaussian_log_prob(means.col(i), policy.log_std, actions.col(i)) * advantages(i);
    }
    return {value / n, log_prob_gradient(policy, states, actions, advantages / n)};
}

/// Synchronous A2C: one actor step along the advantage-weighted score and one
/// critic regression step per rollout.
class A2c {
public:
    A2c() = default;
    A2c(std::size_t obs_size, std::size_t action_size, const AgentConfig& config, Rng& rng)
        : model_(obs_size, action_size, config, rng), gamma_(config.gamma) {}

    [[nodiscard]] Eigen::VectorXd act(const Eigen::VectorXd& obs, ActMode mode, Rng& rng) const {
        return model_.act(obs, mode, rng);
    }

    UpdateStats update(std::span<const Transition> rollout) {
        if (rollout.empty()) throw Error(ErrorKind::InputInvalid, "a2c_update: empty rollout");
        const auto batch = RolloutBatch::from(rollout);
        const auto est = estimate_advantages(model_, batch, gamma_);
        const auto objective = policy_gradient_objective(model_.policy(), batch.states, batch.actions, est.advantages);
        UpdateStats stats;
        stats.actor_objective = objective.value;
        stats.mean_advantage = est.advantages.mean();
        if (!std::isfinite(objective.value)) {
            stats.skipped = true;
            return stats;
        }
        try {
            model_.ascend_policy(objective.gradient);
            stats.critic_loss = model_.fit_critic(batch.states, est.targets);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::GradInvalid) throw;
            stats.skipped = true;
        }
        return stats;
    }

    [[nodiscard]] GaussianActorCritic& model() noexcept { return model_; }
    [[nodiscard]] const GaussianActorCritic& model() const noexcept { return model_; }
    void set_gamma(double gamma) noexcept { gamma_ = gamma; }

private:
    GaussianActorCritic model_;
    double gamma_ = 0.99;
};

}  // namespace ensemble_trader
