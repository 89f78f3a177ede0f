#pragma once

// Proximal policy optimization with the clipped surrogate objective.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/agents/a2c.hpp"
#include "ensemble_trader/agents/common.hpp"
#include "ensemble_trader/neural.hpp"

namespace ensemble_trader {

/// mean_i min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) with
/// rho_i = exp(log pi(a_i|s_i) - old_log_prob_i), and its policy gradient.
/// Samples where the clipped branch is strictly smaller contribute nothing.
inline PolicyObjective ppo_surrogate(const GaussianPolicy& policy, const Eigen::MatrixXd& states,
                                     const Eigen::MatrixXd& actions, const Eigen::VectorXd& old_log_probs,
                                     const Eigen::VectorXd& advantages, double epsilon,
                                     Eigen::VectorXd* ratios_out = nullptr) {
    const Eigen::Index n = states.cols();
    const Eigen::MatrixXd means = policy.mean.forward_batch(states);
    Eigen::VectorXd weights = Eigen::VectorXd::Zero(n);
    if (ratios_out) ratios_out->resize(n);
    double value = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double ratio = std::exp(gaussian_log_prob(means.col(i), policy.log_std, actions.col(i)) - old_log_probs(i));
        if (ratios_out) (*ratios_out)(i) = ratio;
        const double a = advantages(i);
        value += ppo_clip_objective(ratio, a, epsilon);
        const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
        if (ratio * a <= clipped * a) {
            // d(rho A)/d theta = rho A d log pi / d theta
            weights(i) = ratio * a / static_cast<double>(n);
        }
    }
    return {value / static_cast<double>(n), log_prob_gradient(policy, states, actions, weights)};
}

/// Probability ratios of the current policy against stored log probs.
inline Eigen::VectorXd policy_ratios(const GaussianPolicy& policy, const Eigen::MatrixXd& states,
                                     const Eigen::MatrixXd& actions, const Eigen::VectorXd& old_log_probs) {
    const Eigen::MatrixXd means = policy.mean.forward_batch(states);
    Eigen::VectorXd r(states.cols());
    for (Eigen::Index i = 0; i < states.cols(); ++i) {
        r(i) = std::exp(gaussian_log_prob(means.col(i), policy.log_std, actions.col(i)) - old_log_probs(i));
    }
    return r;
}

class Ppo {
public:
    Ppo() = default;
    Ppo(std::size_t obs_size, std::size_t action_size, const AgentConfig& config, Rng& rng)
        : model_(obs_size, action_size, config, rng),
          gamma_(config.gamma),
          epsilon_(config.clip_epsilon),
          normalize_(config.normalize_advantages),
          max_clip_fraction_(config.max_clip_fraction) {}

    [[nodiscard]] Eigen::VectorXd act(const Eigen::VectorXd& obs, ActMode mode, Rng& rng) const {
        return model_.act(obs, mode, rng);
    }

    /// `rollout` must come from the current policy with log probs recorded.
    /// Advantages and critic targets are frozen before the first epoch. The
    /// epochs stop early once the share of minibatch ratios outside
    /// [1 - eps, 1 + eps] exceeds max_clip_fraction; the policy step that
    /// caused it is undone.
    UpdateStats update(std::span<const Transition> rollout, std::size_t epochs, std::size_t minibatch, Rng& rng) {
        UpdateStats stats;
        if (epochs == 0 || rollout.empty()) return stats;
        const auto batch = RolloutBatch::from(rollout);
        auto est = estimate_advantages(model_, batch, gamma_);
        stats.mean_advantage = est.advantages.mean();
        Eigen::VectorXd adv = est.advantages;
        if (normalize_ && adv.size() > 1) {
            const double mean = adv.mean();
            const double sd = std::sqrt((adv.array() - mean).square().sum() / static_cast<double>(adv.size()));
            adv = (adv.array() - mean) / (sd + 1e-8);
        }

        const auto n = static_cast<std::size_t>(batch.size());
        const std::size_t mb = std::clamp<std::size_t>(minibatch, 1, n);
        std::vector<Eigen::Index> order(n);
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::size_t steps = 0;
        bool stop = false;
        Eigen::VectorXd ratios;
        GaussianPolicy before_step = model_.policy();
        for (std::size_t epoch = 0; epoch < epochs && !stop; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < n; start += mb) {
                const std::size_t count = std::min(mb, n - start);
                const std::span<const Eigen::Index> idx(order.data() + start, count);
                const Eigen::MatrixXd s = batch.states(Eigen::all, idx);
                const Eigen::MatrixXd a = batch.actions(Eigen::all, idx);
                const Eigen::VectorXd old_lp = batch.log_probs(idx);
                const Eigen::VectorXd mb_adv = adv(idx);
                const Eigen::VectorXd targets = est.targets(idx);
                const auto objective = ppo_surrogate(model_.policy(), s, a, old_lp, mb_adv, epsilon_, &ratios);
                const auto outside = (ratios.array() < 1.0 - epsilon_ || ratios.array() > 1.0 + epsilon_).count();
                if (static_cast<double>(outside) > max_clip_fraction_ * static_cast<double>(count)) {
                    if (steps > 0) model_.policy() = before_step;
                    stop = true;
                    stats.stopped_early = true;
                    break;
                }
                if (!std::isfinite(objective.value)) {
                    stats.skipped = true;
                    continue;
                }
                try {
                    before_step = model_.policy();
                    model_.ascend_policy(objective.gradient);
                    stats.critic_loss += model_.fit_critic(s, targets);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::GradInvalid) throw;
                    stats.skipped = true;
                    continue;
                }
                stats.actor_objective += objective.value;
                ++steps;
            }
        }
        if (steps > 0) {
            stats.actor_objective /= static_cast<double>(steps);
            stats.critic_loss /= static_cast<double>(steps);
        }
        return stats;
    }

    [[nodiscard]] GaussianActorCritic& model() noexcept { return model_; }
    [[nodiscard]] const GaussianActorCritic& model() const noexcept { return model_; }
    [[nodiscard]] double epsilon() const noexcept { return epsilon_; }

private:
    GaussianActorCritic model_;
    double gamma_ = 0.99;
    double epsilon_ = 0.2;
    bool normalize_ = true;
    double max_clip_fraction_ = 0.01;
};

}  // namespace ensemble_trader
