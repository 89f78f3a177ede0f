#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "ensemble_trader/agents/agent.hpp"
#include "support/bandit.hpp"
#include "support/fixtures.hpp"

using namespace ensemble_trader;
namespace ts = test_support;

namespace {

AgentConfig tiny_config() {
    AgentConfig c;
    c.hidden = {8};
    c.rollout_length = 32;
    c.batch_size = 32;
    c.learning_starts = 64;
    c.actor_lr = 3e-3;
    c.critic_lr = 3e-3;
    return c;
}

std::vector<Transition> bandit_rollout(const GaussianActorCritic& model, ts::Bandit& env, std::size_t n, Rng& rng) {
    std::vector<Transition> out;
    Eigen::VectorXd obs = env.begin_episode();
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = model.sample(obs, rng);
        const Feedback fb = env.advance(s.action.cwiseMax(-1.0).cwiseMin(1.0));
        out.push_back({obs, s.action, fb.reward, fb.observation, fb.done, s.log_prob});
        obs = env.begin_episode();
    }
    return out;
}

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

/// Central differences of `f` over every entry of `params`.
template <class F>
Eigen::VectorXd numeric_gradient(Eigen::VectorXd& params, F f, double eps = 1e-5) {
    Eigen::VectorXd g(params.size());
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double keep = params(i);
        params(i) = keep + eps;
        const double up = f();
        params(i) = keep - eps;
        const double down = f();
        params(i) = keep;
        g(i) = (up - down) / (2 * eps);
    }
    return g;
}

}  // namespace

TEST(Advantage, Examples) {
    EXPECT_NEAR(advantage(1.0, 0.9, 0.5, 2.0, false), 2.3, 1e-12);
    EXPECT_EQ(advantage(1.0, 0.9, 1.0, 5.0, true), 0.0);
    EXPECT_EQ(advantage(0.7, 0.99, 0.0, 0.0, false), 0.7);
}

TEST(DdpgTarget, Examples) {
    EXPECT_NEAR(ddpg_target(1.0, 0.99, 2.0, false), 2.98, 1e-12);
    EXPECT_EQ(ddpg_target(1.0, 0.99, 2.0, true), 1.0);
    EXPECT_EQ(ddpg_target(2.0, 0.0, 123.0, false), 2.0);
}

TEST(DdpgTarget, ZeroGammaBatchIgnoresTargetNets) {
    AgentConfig c = tiny_config();
    c.gamma = 1e-300;  // validate() needs gamma > 0; the product underflows to zero
    Rng rng(1);
    Ddpg agent(3, 1, c, rng);
    Ddpg zero_gamma = agent;
    const Eigen::VectorXd rewards = Eigen::VectorXd::Constant(5, 2.0);
    const Eigen::MatrixXd next = Eigen::MatrixXd::Random(3, 5);
    const Eigen::VectorXd y = zero_gamma.targets(rewards, next, Eigen::VectorXd::Zero(5));
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_EQ(y(i), 2.0);
}

TEST(PpoClip, Examples) {
    EXPECT_NEAR(ppo_clip_objective(1.3, 1.0, 0.2), 1.2, 1e-12);
    EXPECT_NEAR(ppo_clip_objective(0.5, -1.0, 0.2), -0.8, 1e-12);
    for (double adv : {-3.0, -0.1, 0.0, 0.4, 7.0}) EXPECT_EQ(ppo_clip_objective(1.0, adv, 0.2), adv);
}

TEST(ReplayBufferTest, RingAndUnderflow) {
    ReplayBuffer buf(3);
    Rng rng(0);
    try {
        (void)buf.sample(1, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::BufferUnderflow);
    }
    for (int i = 0; i < 5; ++i) buf.push({Eigen::VectorXd::Constant(1, i), {}, static_cast<double>(i), {}, false, 0.0});
    EXPECT_EQ(buf.size(), 3u);
    EXPECT_EQ(buf[0].reward, 3.0);
    EXPECT_EQ(buf[1].reward, 4.0);
    EXPECT_EQ(buf[2].reward, 2.0);
    EXPECT_THROW((void)buf.sample(4, rng), Error);
}

TEST(A2cUpdate, ZeroAdvantagesLeaveActorUnchanged) {
    Rng rng(2);
    A2c agent(3, 1, tiny_config(), rng);
    // Zero critic and rewards give A = 0 on terminal steps.
    agent.model().critic().params().setZero();
    ts::Bandit env(3);
    auto rollout = bandit_rollout(agent.model(), env, 16, rng);
    for (auto& t : rollout) t.reward = 0.0;
    const Eigen::VectorXd mean_before = agent.model().policy().mean.params();
    const Eigen::VectorXd std_before = agent.model().policy().log_std;
    agent.update(rollout);
    EXPECT_EQ(agent.model().policy().mean.params(), mean_before);
    EXPECT_EQ(agent.model().policy().log_std, std_before);
}

TEST(A2cUpdate, ActorGradientMatchesFiniteDifferences) {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        GaussianActorCritic model(3, 2, tiny_config(), rng);
        const Eigen::MatrixXd S = Eigen::MatrixXd::Random(3, 6);
        const Eigen::MatrixXd A = Eigen::MatrixXd::Random(2, 6);
        const Eigen::VectorXd adv = Eigen::VectorXd::Random(6);
        auto& policy = model.policy();
        const auto analytic = policy_gradient_objective(policy, S, A, adv);
        auto f = [&] { return policy_gradient_objective(policy, S, A, adv).value; };
        const Eigen::VectorXd num_mean = numeric_gradient(policy.mean.params(), f);
        const Eigen::VectorXd num_std = numeric_gradient(policy.log_std, f);
        for (Eigen::Index i = 0; i < num_mean.size(); ++i) {
            ASSERT_LT(relative_gap(analytic.gradient.mean_params(i), num_mean(i)), 1e-4);
        }
        for (Eigen::Index i = 0; i < num_std.size(); ++i) ASSERT_LT(relative_gap(analytic.gradient.log_std(i), num_std(i)), 1e-4);
    }
}

TEST(PpoUpdate, FirstStepGradientEqualsUnclippedPolicyGradient) {
    Rng rng(6);
    GaussianActorCritic model(3, 2, tiny_config(), rng);
    ts::Bandit env(7);
    const auto rollout = bandit_rollout(model, env, 1, rng);
    const auto batch = RolloutBatch::from(rollout);
    const Eigen::VectorXd adv = Eigen::VectorXd::Constant(1, 0.8);
    const auto ppo = ppo_surrogate(model.policy(), batch.states, batch.actions, batch.log_probs, adv, 0.2);
    const auto pg = policy_gradient_objective(model.policy(), batch.states, batch.actions, adv);
    EXPECT_NEAR(ppo.value, 0.8, 1e-12);
    for (Eigen::Index i = 0; i < pg.gradient.mean_params.size(); ++i) {
        EXPECT_NEAR(ppo.gradient.mean_params(i), pg.gradient.mean_params(i), 1e-12);
    }
    for (Eigen::Index i = 0; i < pg.gradient.log_std.size(); ++i) {
        EXPECT_NEAR(ppo.gradient.log_std(i), pg.gradient.log_std(i), 1e-12);
    }
}

TEST(PpoUpdate, SurrogateGradientMatchesFiniteDifferences) {
    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        GaussianActorCritic model(3, 1, tiny_config(), rng);
        ts::Bandit env(static_cast<std::uint64_t>(trial));
        const auto batch = RolloutBatch::from(bandit_rollout(model, env, 8, rng));
        const Eigen::VectorXd adv = Eigen::VectorXd::Random(8);
        auto& policy = model.policy();
        // Move away from ratio 1 but stay inside the clip band.
        policy.mean.params() += 0.01 * Eigen::VectorXd::Random(policy.mean.params().size());
        const auto analytic = ppo_surrogate(policy, batch.states, batch.actions, batch.log_probs, adv, 0.2);
        auto f = [&] { return ppo_surrogate(policy, batch.states, batch.actions, batch.log_probs, adv, 0.2).value; };
        const Eigen::VectorXd num = numeric_gradient(policy.mean.params(), f);
        for (Eigen::Index i = 0; i < num.size(); ++i) ASSERT_LT(relative_gap(analytic.gradient.mean_params(i), num(i)), 1e-4);
    }
}

TEST(PpoUpdate, ZeroEpochsIsNoOp) {
    Rng rng(12);
    Ppo agent(3, 1, tiny_config(), rng);
    ts::Bandit env(1);
    const auto rollout = bandit_rollout(agent.model(), env, 32, rng);
    const Eigen::VectorXd before = agent.model().policy().mean.params();
    const Eigen::VectorXd critic_before = agent.model().critic().params();
    agent.update(rollout, 0, 8, rng);
    EXPECT_EQ(agent.model().policy().mean.params(), before);
    EXPECT_EQ(agent.model().critic().params(), critic_before);
}

TEST(PpoUpdate, RatiosStayNearClipBand) {
    const AgentConfig c;
    Rng rng(13);
    Ppo agent(3, 1, c, rng);
    ts::Bandit env(2);
    std::size_t inside = 0, total = 0;
    for (int round = 0; round < 20; ++round) {
        const auto rollout = bandit_rollout(agent.model(), env, 256, rng);
        const auto batch = RolloutBatch::from(rollout);
        agent.update(rollout, c.epochs, c.batch_size, rng);
        const Eigen::VectorXd r = policy_ratios(agent.model().policy(), batch.states, batch.actions, batch.log_probs);
        for (Eigen::Index i = 0; i < r.size(); ++i) {
            inside += (r(i) >= 1.0 - c.clip_epsilon - 0.05 && r(i) <= 1.0 + c.clip_epsilon + 0.05) ? 1 : 0;
            ++total;
        }
    }
    EXPECT_GE(static_cast<double>(inside) / static_cast<double>(total), 0.99);
}

TEST(DdpgUpdate, SoftUpdateExtremes) {
    Rng rng(14);
    Ddpg agent(3, 1, tiny_config(), rng);
    Mlp target = agent.target_actor();
    agent.actor().params() += Eigen::VectorXd::Ones(agent.actor().params().size());
    Mlp frozen = target;
    soft_update(frozen, agent.actor(), 0.0);
    EXPECT_EQ(frozen.params(), target.params());
    soft_update(target, agent.actor(), 1.0);
    EXPECT_EQ(target.params(), agent.actor().params());
}

TEST(DdpgUpdate, TauOneCopiesOnlineNetsAfterUpdate) {
    AgentConfig c = tiny_config();
    c.tau = 1.0;
    Rng rng(15);
    Ddpg agent(3, 1, c, rng);
    ReplayBuffer buf(100);
    ts::Bandit env(4);
    for (int i = 0; i < 40; ++i) {
        const Eigen::VectorXd obs = env.begin_episode();
        const Eigen::VectorXd a = agent.act(obs, ActMode::Stochastic, rng);
        const auto fb = env.advance(a);
        buf.push({obs, a, fb.reward, fb.observation, fb.done, 0.0});
    }
    agent.update(buf, 16, rng);
    EXPECT_EQ(agent.target_actor().params(), agent.actor().params());
    EXPECT_EQ(agent.target_critic().params(), agent.critic().params());
    EXPECT_THROW(agent.update(buf, 41, rng), Error);
}

TEST(DdpgUpdate, ActorObjectiveGradientMatchesFiniteDifferences) {
    Rng rng(16);
    for (int trial = 0; trial < 10; ++trial) {
        Ddpg agent(3, 2, tiny_config(), rng);
        const Eigen::MatrixXd S = Eigen::MatrixXd::Random(3, 5);
        const auto analytic = ddpg_actor_objective(agent.actor(), agent.critic(), S);
        auto f = [&] { return ddpg_actor_objective(agent.actor(), agent.critic(), S).value; };
        const Eigen::VectorXd num = numeric_gradient(agent.actor().params(), f);
        for (Eigen::Index i = 0; i < num.size(); ++i) ASSERT_LT(relative_gap(analytic.gradient(i), num(i)), 1e-4);
    }
}

TEST(DdpgUpdate, CriticLossGradientMatchesFiniteDifferences) {
    Rng rng(18);
    for (int trial = 0; trial < 20; ++trial) {
        Ddpg agent(3, 2, tiny_config(), rng);
        const Eigen::MatrixXd S = Eigen::MatrixXd::Random(3, 6);
        const Eigen::MatrixXd A = Eigen::MatrixXd::Random(2, 6);
        const Eigen::VectorXd y = Eigen::VectorXd::Random(6);
        const auto analytic = ddpg_critic_loss(agent.critic(), S, A, y);
        auto f = [&] { return ddpg_critic_loss(agent.critic(), S, A, y).value; };
        const Eigen::VectorXd num = numeric_gradient(agent.critic().params(), f);
        for (Eigen::Index i = 0; i < num.size(); ++i) ASSERT_LT(relative_gap(analytic.gradient(i), num(i)), 1e-4);
    }
}

TEST(DdpgUpdate, CriticLossDecreasesOnFixedBatch) {
    AgentConfig c = tiny_config();
    Rng rng(17);
    Ddpg agent(3, 1, c, rng);
    const Eigen::MatrixXd S = Eigen::MatrixXd::Random(3, 32);
    const Eigen::MatrixXd A = Eigen::MatrixXd::Random(1, 32);
    const Eigen::VectorXd y = Eigen::VectorXd::Random(32);
    Adam opt(agent.critic().params().size(), {1e-2});
    const double first = ddpg_critic_loss(agent.critic(), S, A, y).value;
    for (int i = 0; i < 100; ++i) opt.step(agent.critic().params(), ddpg_critic_loss(agent.critic(), S, A, y).gradient);
    EXPECT_LT(ddpg_critic_loss(agent.critic(), S, A, y).value, first);
}

class BanditLearning : public ::testing::TestWithParam<AgentKind> {};

TEST_P(BanditLearning, PicksRewardedArmAfter2000Updates) {
    const AgentKind kind = GetParam();
    AgentConfig c = tiny_config();
    c.total_steps = kind == AgentKind::DDPG ? 2000 + c.learning_starts - 1 : 2000 * c.rollout_length;
    c.epochs = 4;
    c.batch_size = kind == AgentKind::PPO ? 16 : 32;
    ts::Bandit env(42);
    const TrainedAgent agent = train_agent(kind, env, c, 7);
    EXPECT_EQ(agent.updates, 2000u);
    EXPECT_GT(env.accuracy(agent), 0.95) << to_string(kind);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, BanditLearning, ::testing::ValuesIn(kAllAgentKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

class AgentInterface : public ::testing::TestWithParam<AgentKind> {};

TEST_P(AgentInterface, ZeroStepsReturnsInitializedAgent) {
    AgentConfig c = tiny_config();
    c.total_steps = 0;
    ts::Bandit env(1);
    const auto trained = train_agent(GetParam(), env, c, 5);
    const auto fresh = make_agent(GetParam(), 3, 1, c, mix_seed(5));
    EXPECT_EQ(parameter_checksum(trained), parameter_checksum(fresh));
    EXPECT_EQ(trained.steps_trained, 0u);
    EXPECT_EQ(env.steps(), 0u);
}

TEST_P(AgentInterface, SameSeedSameChecksum) {
    AgentConfig c = tiny_config();
    c.total_steps = 300;
    const ts::EnvFixture fx(ts::random_panel(40, 2, 3));
    auto env_a = fx.env();
    auto env_b = fx.env();
    const auto a = train_agent(GetParam(), env_a, c, 11);
    const auto b = train_agent(GetParam(), env_b, c, 11);
    EXPECT_EQ(parameter_checksum(a), parameter_checksum(b));
    auto env_c = fx.env();
    EXPECT_NE(parameter_checksum(train_agent(GetParam(), env_c, c, 12)), parameter_checksum(a));
}

TEST_P(AgentInterface, ActIsClippedDeterministicAndShapeChecked) {
    AgentConfig c = tiny_config();
    const auto agent = make_agent(GetParam(), 3, 2, c, 9);
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const Eigen::VectorXd obs = 50.0 * Eigen::VectorXd::Random(3);
        const Eigen::VectorXd s = act(agent, obs, ActMode::Stochastic, rng);
        ASSERT_TRUE((s.array().abs() <= 1.0).all());
        EXPECT_EQ(act(agent, obs, ActMode::Deterministic, rng), act(agent, obs, ActMode::Deterministic, rng));
    }
    try {
        (void)act(agent, Eigen::VectorXd::Zero(4), ActMode::Deterministic, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ShapeError);
    }
}

TEST_P(AgentInterface, CheckpointRestoresActions) {
    const auto agent = make_agent(GetParam(), 3, 2, tiny_config(), 19);
    std::stringstream buf;
    save_agent(buf, agent);
    const auto restored = load_agent(buf, tiny_config());
    EXPECT_EQ(restored.kind, agent.kind);
    EXPECT_EQ(parameter_checksum(restored), parameter_checksum(agent));
}

INSTANTIATE_TEST_SUITE_P(AllKinds, AgentInterface, ::testing::ValuesIn(kAllAgentKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(DdpgAct, ExplorationNoiseHasZeroMean) {
    Rng rng(23);
    AgentConfig c = tiny_config();
    Ddpg agent(3, 1, c, rng);
    agent.actor().params().setZero();  // mu = 0 keeps the clip inactive
    const Eigen::VectorXd obs = Eigen::VectorXd::Random(3);
    const double det = agent.act(obs, ActMode::Deterministic, rng)(0);
    double sum = 0.0;
    const int n = 10'000;
    for (int i = 0; i < n; ++i) sum += agent.act(obs, ActMode::Stochastic, rng)(0) - det;
    EXPECT_NEAR(sum / n, 0.0, 4 * c.exploration_noise / std::sqrt(n));
}

TEST(TrainAgent, PpoBeatsCashOnMonotoneUptrend) {
    Eigen::MatrixXd prices(80, 2);
    for (Eigen::Index t = 0; t < 80; ++t) {
        prices(t, 0) = 50.0 * std::pow(1.004, static_cast<double>(t));
        prices(t, 1) = 80.0 + 0.3 * static_cast<double>(t);
    }
    const ts::EnvFixture fx(ts::panel_from_prices(prices));
    AgentConfig c = tiny_config();
    c.hidden = {16};
    c.rollout_length = 79;
    c.batch_size = 79;
    c.total_steps = 79 * 60;
    auto train_env = fx.env();
    const auto agent = train_agent(AgentKind::PPO, train_env, c, 3);

    auto env = fx.env();
    Rng rng(0);
    while (!env.state().done) env.step(ActionVector::clipped(act(agent, env.observe(), ActMode::Deterministic, rng)));
    EXPECT_GT(env.state().portfolio_value() / env.config().initial_balance - 1.0, 0.0);
}

TEST(TrainAgent, WarmStartContinuesFromPrevious) {
    AgentConfig c = tiny_config();
    c.total_steps = 64;
    ts::Bandit env(5);
    const auto first = train_agent(AgentKind::A2C, env, c, 1);
    ts::Bandit env2(5);
    c.total_steps = 0;
    const auto resumed = train_agent(AgentKind::A2C, env2, c, 2, &first);
    EXPECT_EQ(parameter_checksum(resumed), parameter_checksum(first));
    EXPECT_THROW(train_agent(AgentKind::PPO, env2, c, 2, &first), Error);
}
