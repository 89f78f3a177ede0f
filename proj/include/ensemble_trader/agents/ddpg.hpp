#pragma once

// Deep deterministic policy gradient: tanh-squashed deterministic actor,
// Q(s, a) critic, soft-updated target copies and Gaussian exploration noise.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/agents/common.hpp"
#include "ensemble_trader/neural.hpp"

namespace ensemble_trader {

/// y_i = r_i + gamma Q'(s'_i, mu'(s'_i)) (1 - done_i)
inline double ddpg_target(double reward, double gamma, double target_q_next, bool done) noexcept {
    return reward + gamma * (done ? 0.0 : target_q_next);
}

/// Critic input: state stacked over action.
inline Eigen::MatrixXd critic_input(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) {
    Eigen::MatrixXd x(states.rows() + actions.rows(), states.cols());
    x.topRows(states.rows()) = states;
    x.bottomRows(actions.rows()) = actions;
    return x;
}

/// mean_i (y_i - Q(s_i, a_i))^2 and its parameter gradient.
struct CriticLoss {
    double value = 0.0;
    Eigen::VectorXd gradient;
};

inline CriticLoss ddpg_critic_loss(const Mlp& critic, const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions,
                                   const Eigen::VectorXd& targets) {
    MlpCache cache;
    const Eigen::RowVectorXd q = critic.forward_batch(critic_input(states, actions), &cache).row(0);
    const Eigen::RowVectorXd err = q - targets.transpose();
    const double n = static_cast<double>(states.cols());
    const Eigen::MatrixXd upstream = (2.0 / n) * err;
    return {err.squaredNorm() / n, critic.backward(cache, upstream).params};
}

/// mean_i Q(s_i, mu(s_i)) and its gradient with respect to the actor
/// parameters, where mu(s) = tanh(actor(s)).
struct ActorObjective {
    double value = 0.0;
    Eigen::VectorXd gradient;
};

inline ActorObjective ddpg_actor_objective(const Mlp& actor, const Mlp& critic, const Eigen::MatrixXd& states) {
    MlpCache actor_cache;
    const Eigen::MatrixXd actions = actor.forward_batch(states, &actor_cache).array().tanh();
    MlpCache critic_cache;
    const Eigen::RowVectorXd q = critic.forward_batch(critic_input(states, actions), &critic_cache).row(0);
    const double n = static_cast<double>(states.cols());
    const Eigen::MatrixXd upstream = Eigen::RowVectorXd::Constant(states.cols(), 1.0 / n);
    const Eigen::MatrixXd d_input = critic.backward(critic_cache, upstream).input;
    const Eigen::MatrixXd d_action = d_input.bottomRows(actions.rows());
    const Eigen::MatrixXd d_pre = d_action.array() * (1.0 - actions.array().square());
    return {q.sum() / n, actor.backward(actor_cache, d_pre).params};
}

/// target <- tau * online + (1 - tau) * target
inline void soft_update(Mlp& target, const Mlp& online, double tau) {
    if (tau >= 1.0) {
        target.params() = online.params();
    } else {
        target.params() = tau * online.params() + (1.0 - tau) * target.params();
    }
}

class Ddpg {
public:
    Ddpg() = default;
    Ddpg(std::size_t obs_size, std::size_t action_size, const AgentConfig& config, Rng& rng)
        : actor_(Mlp::glorot(layer_sizes(obs_size, config.hidden, action_size), rng)),
          critic_(Mlp::glorot(layer_sizes(obs_size + action_size, config.hidden, 1), rng)),
          target_actor_(actor_),
          target_critic_(critic_),
          gamma_(config.gamma),
          tau_(config.tau),
          noise_(config.exploration_noise) {
        reset_optimizers(config);
    }

    void reset_optimizers(const AgentConfig& config) {
        actor_opt_ = Adam(actor_.params().size(), {config.actor_lr});
        critic_opt_ = Adam(critic_.params().size(), {config.critic_lr});
    }

    [[nodiscard]] Eigen::VectorXd mu(const Eigen::VectorXd& obs) const { return actor_.forward(obs).array().tanh(); }

    [[nodiscard]] Eigen::VectorXd act(const Eigen::VectorXd& obs, ActMode mode, Rng& rng) const {
        Eigen::VectorXd a = mu(obs);
        if (mode == ActMode::Stochastic) {
            std::normal_distribution<double> noise(0.0, noise_);
            for (Eigen::Index d = 0; d < a.size(); ++d) a(d) += noise(rng);
        }
        return a.cwiseMax(-1.0).cwiseMin(1.0);
    }

    /// Target values y_i for a batch, from the target networks.
    [[nodiscard]] Eigen::VectorXd targets(const Eigen::VectorXd& rewards, const Eigen::MatrixXd& next_states,
                                          const Eigen::VectorXd& done) const {
        const Eigen::MatrixXd next_actions = target_actor_.forward_batch(next_states).array().tanh();
        const Eigen::RowVectorXd q_next = target_critic_.forward_batch(critic_input(next_states, next_actions)).row(0);
        Eigen::VectorXd y(rewards.size());
        for (Eigen::Index i = 0; i < rewards.size(); ++i) {
            y(i) = ddpg_target(rewards(i), gamma_, q_next(i), done(i) > 0.5);
        }
        return y;
    }

    /// One critic step, one actor step and a soft target update on a batch
    /// drawn uniformly from `buffer`.
    UpdateStats update(const ReplayBuffer& buffer, std::size_t batch_n, Rng& rng) {
        const auto sample = buffer.sample(batch_n, rng);
        auto get = [&](auto member) {
            return stack_columns(sample, [&](const Transition* t) -> const Eigen::VectorXd& { return t->*member; });
        };
        const Eigen::MatrixXd states = get(&Transition::state);
        const Eigen::MatrixXd actions = get(&Transition::action);
        const Eigen::MatrixXd next_states = get(&Transition::next_state);
        Eigen::VectorXd rewards(static_cast<Eigen::Index>(batch_n));
        Eigen::VectorXd done(static_cast<Eigen::Index>(batch_n));
        for (std::size_t i = 0; i < batch_n; ++i) {
            rewards(static_cast<Eigen::Index>(i)) = sample[i]->reward;
            done(static_cast<Eigen::Index>(i)) = sample[i]->done ? 1.0 : 0.0;
        }

        UpdateStats stats;
        const auto loss = ddpg_critic_loss(critic_, states, actions, targets(rewards, next_states, done));
        stats.critic_loss = loss.value;
        try {
            critic_opt_.step(critic_.params(), loss.gradient);
            const auto objective = ddpg_actor_objective(actor_, critic_, states);
            stats.actor_objective = objective.value;
            actor_opt_.step(actor_.params(), -objective.gradient);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::GradInvalid) throw;
            stats.skipped = true;
        }
        soft_update(target_actor_, actor_, tau_);
        soft_update(target_critic_, critic_, tau_);
        return stats;
    }

    void write(CheckpointWriter& out) const {
        out.add("actor", actor_);
        out.add("critic", critic_);
        out.add("target_actor", target_actor_);
        out.add("target_critic", target_critic_);
    }
    void read(const Checkpoint& cp) {
        actor_ = cp.net("actor");
        critic_ = cp.net("critic");
        target_actor_ = cp.net("target_actor");
        target_critic_ = cp.net("target_critic");
    }

    [[nodiscard]] Mlp& actor() noexcept { return actor_; }
    [[nodiscard]] const Mlp& actor() const noexcept { return actor_; }
    [[nodiscard]] Mlp& critic() noexcept { return critic_; }
    [[nodiscard]] const Mlp& critic() const noexcept { return critic_; }
    [[nodiscard]] Mlp& target_actor() noexcept { return target_actor_; }
    [[nodiscard]] const Mlp& target_actor() const noexcept { return target_actor_; }
    [[nodiscard]] Mlp& target_critic() noexcept { return target_critic_; }
    [[nodiscard]] const Mlp& target_critic() const noexcept { return target_critic_; }
    [[nodiscard]] double tau() const noexcept { return tau_; }

private:
    Mlp actor_;
    Mlp critic_;
    Mlp target_actor_;
    Mlp target_critic_;
    Adam actor_opt_;
    Adam critic_opt_;
    double gamma_ = 0.99;
    double tau_ = 0.005;
    double noise_ = 0.1;
};

}  // namespace ensemble_trader
