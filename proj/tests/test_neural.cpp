#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "ensemble_trader/neural.hpp"

using namespace ensemble_trader;

namespace {

/// Forward pass with explicit loops over the flat parameter layout.
std::vector<double> loop_forward(const std::vector<std::size_t>& sizes, const Eigen::VectorXd& params,
                                 std::vector<double> h) {
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const std::size_t in = sizes[l], out = sizes[l + 1];
        std::vector<double> z(out, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            double acc = params(static_cast<Eigen::Index>(offset + in * out + r));
            for (std::size_t c = 0; c < in; ++c) acc += params(static_cast<Eigen::Index>(offset + r * in + c)) * h[c];
            z[r] = (l + 2 < sizes.size()) ? std::tanh(acc) : acc;
        }
        offset += in * out + out;
        h = std::move(z);
    }
    return h;
}

Eigen::VectorXd uniform_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
    return v;
}

Mlp random_net(Rng& rng) {
    std::uniform_int_distribution<std::size_t> width(1, 6);
    std::uniform_int_distribution<std::size_t> depth(1, 3);
    std::vector<std::size_t> sizes{width(rng)};
    const std::size_t hidden = depth(rng);
    for (std::size_t i = 0; i < hidden; ++i) sizes.push_back(width(rng));
    sizes.push_back(width(rng));
    Mlp net = Mlp::glorot(sizes, rng);
    net.params() += uniform_vector(net.params().size(), rng, 0.3);
    return net;
}

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST(Mlp, ForwardMatchesLoopOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const Mlp net = random_net(rng);
        const Eigen::VectorXd x = uniform_vector(static_cast<Eigen::Index>(net.input_size()), rng);
        const Eigen::VectorXd y = net.forward(x);
        const auto expect = loop_forward(net.sizes(), net.params(), std::vector<double>(x.data(), x.data() + x.size()));
        ASSERT_EQ(static_cast<std::size_t>(y.size()), expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y(static_cast<Eigen::Index>(i)), expect[i], 1e-12);
    }
}

TEST(Mlp, BatchForwardEqualsColumnwise) {
    Rng rng(4);
    const Mlp net = random_net(rng);
    const Eigen::MatrixXd X = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(net.input_size()), 7);
    const Eigen::MatrixXd Y = net.forward_batch(X);
    for (Eigen::Index c = 0; c < X.cols(); ++c) EXPECT_TRUE(Y.col(c).isApprox(net.forward(X.col(c)), 1e-12));
}

TEST(Mlp, ShapeErrors) {
    Mlp net({3, 4, 2});
    try {
        (void)net.forward(Eigen::VectorXd::Zero(2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ShapeError);
    }
    EXPECT_THROW(Mlp({3}), Error);
    EXPECT_THROW(Mlp({3, 0, 1}), Error);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
    Rng rng(11);
    const double eps = 1e-5;
    for (int trial = 0; trial < 25; ++trial) {
        Mlp net = random_net(rng);
        const auto in = static_cast<Eigen::Index>(net.input_size());
        const auto out = static_cast<Eigen::Index>(net.output_size());
        const Eigen::MatrixXd X = Eigen::MatrixXd::Random(in, 3);
        const Eigen::MatrixXd U = Eigen::MatrixXd::Random(out, 3);
        auto loss = [&](const Mlp& m, const Eigen::MatrixXd& x) { return (m.forward_batch(x).array() * U.array()).sum(); };

        MlpCache cache;
        net.forward_batch(X, &cache);
        const MlpGradient g = net.backward(cache, U);
        for (Eigen::Index p = 0; p < net.params().size(); ++p) {
            const double keep = net.params()(p);
            net.params()(p) = keep + eps;
            const double up = loss(net, X);
            net.params()(p) = keep - eps;
            const double down = loss(net, X);
            net.params()(p) = keep;
            ASSERT_LT(relative_gap(g.params(p), (up - down) / (2 * eps)), 1e-4) << "trial " << trial << " param " << p;
        }
        for (Eigen::Index i = 0; i < X.size(); ++i) {
            Eigen::MatrixXd xp = X, xm = X;
            xp.data()[i] += eps;
            xm.data()[i] -= eps;
            ASSERT_LT(relative_gap(g.input.data()[i], (loss(net, xp) - loss(net, xm)) / (2 * eps)), 1e-4);
        }
    }
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Adam opt(3, AdamConfig{0.01, 0.9, 0.999, 1e-8});
    Eigen::VectorXd p(3);
    p << 1.0, -2.0, 0.5;
    const Eigen::VectorXd start = p;
    Eigen::VectorXd g(3);
    g << 0.3, -4.0, 1e-3;
    opt.step(p, g);
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(p(i) - start(i), -0.01 * (g(i) > 0 ? 1 : -1), 1e-6);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
    Adam opt(2, AdamConfig{});
    Eigen::VectorXd p = Eigen::VectorXd::Ones(2);
    opt.step(p, Eigen::VectorXd::Constant(2, 0.5));
    const Eigen::VectorXd p_before = p, m_before = opt.first_moment(), v_before = opt.second_moment();
    Eigen::VectorXd bad(2);
    bad << 1.0, std::nan("");
    try {
        opt.step(p, bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::GradInvalid);
    }
    EXPECT_EQ(p, p_before);
    EXPECT_EQ(opt.first_moment(), m_before);
    EXPECT_EQ(opt.second_moment(), v_before);
    EXPECT_EQ(opt.steps(), 1);
    bad(1) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(opt.step(p, bad), Error);
}

TEST(Adam, MinimizesQuadratic) {
    Adam opt(2, AdamConfig{0.05, 0.9, 0.999, 1e-8});
    Eigen::VectorXd p(2);
    p << 3.0, -2.0;
    for (int i = 0; i < 2000; ++i) opt.step(p, 2.0 * (p - Eigen::Vector2d(1.0, 0.5)));
    EXPECT_NEAR(p(0), 1.0, 1e-3);
    EXPECT_NEAR(p(1), 0.5, 1e-3);
}

TEST(Gaussian, LogProbOfStandardNormalAtMean) {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    EXPECT_NEAR(gaussian_log_prob(zero, zero, zero), -0.9189385332046727, 1e-12);
    Eigen::VectorXd mean(2), log_std(2), a(2);
    mean << 0.5, -1.0;
    log_std << std::log(2.0), std::log(0.5);
    a << 1.5, -1.25;
    const double expect = (-0.5 * 0.25 - std::log(2.0) - 0.9189385332046727) + (-0.5 * 0.25 - std::log(0.5) - 0.9189385332046727);
    EXPECT_NEAR(gaussian_log_prob(mean, log_std, a), expect, 1e-12);
}

TEST(Gaussian, SamplingMomentsMatchPolicy) {
    Rng rng(21);
    GaussianPolicy policy = GaussianPolicy::create({2, 4, 1}, 0.5, rng);
    policy.mean.bias(1)(0) = 0.3;
    const Eigen::VectorXd s = Eigen::Vector2d(0.2, -0.4);
    const double mean = policy.mean.forward(s)(0);
    double sum = 0.0, sq = 0.0;
    const int n = 100'000;
    for (int i = 0; i < n; ++i) {
        const auto draw = gaussian_sample(policy, s, rng);
        sum += draw.action(0);
        sq += draw.action(0) * draw.action(0);
        if (i < 5) {
            EXPECT_NEAR(draw.log_prob, gaussian_log_prob(policy.mean.forward(s), policy.log_std, draw.action), 1e-12);
        }
    }
    const double m = sum / n;
    EXPECT_NEAR(m, mean, 4 * 0.5 / std::sqrt(n));
    EXPECT_NEAR(std::sqrt(sq / n - m * m), 0.5, 0.01);
}

TEST(Gaussian, LogStdIsClamped) {
    Rng rng(1);
    EXPECT_NEAR(GaussianPolicy::create({1, 1}, 1e-9, rng).stddev()(0), 1e-3, 1e-12);
    EXPECT_NEAR(GaussianPolicy::create({1, 1}, 1e9, rng).stddev()(0), 10.0, 1e-9);
}

TEST(Gaussian, LogProbGradientMatchesFiniteDifferences) {
    Rng rng(8);
    const double eps = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
        GaussianPolicy policy = GaussianPolicy::create({3, 5, 2}, 0.7, rng);
        policy.log_std += uniform_vector(2, rng, 0.3);
        const Eigen::MatrixXd S = Eigen::MatrixXd::Random(3, 4);
        const Eigen::MatrixXd A = Eigen::MatrixXd::Random(2, 4);
        const Eigen::VectorXd w = Eigen::VectorXd::Random(4);
        auto objective = [&](const GaussianPolicy& p) {
            double total = 0.0;
            for (Eigen::Index i = 0; i < S.cols(); ++i) total += w(i) * gaussian_log_prob(p.mean.forward(S.col(i)), p.log_std, A.col(i));
            return total;
        };
        const PolicyGradient g = log_prob_gradient(policy, S, A, w);
        for (Eigen::Index p = 0; p < policy.mean.params().size(); ++p) {
            const double keep = policy.mean.params()(p);
            policy.mean.params()(p) = keep + eps;
            const double up = objective(policy);
            policy.mean.params()(p) = keep - eps;
            const double down = objective(policy);
            policy.mean.params()(p) = keep;
            ASSERT_LT(relative_gap(g.mean_params(p), (up - down) / (2 * eps)), 1e-4);
        }
        for (Eigen::Index d = 0; d < 2; ++d) {
            const double keep = policy.log_std(d);
            policy.log_std(d) = keep + eps;
            const double up = objective(policy);
            policy.log_std(d) = keep - eps;
            const double down = objective(policy);
            policy.log_std(d) = keep;
            ASSERT_LT(relative_gap(g.log_std(d), (up - down) / (2 * eps)), 1e-4);
        }
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Rng rng(5);
    const Mlp net = random_net(rng);
    Eigen::VectorXd extra(3);
    extra << 1.0 / 3.0, -1e-300, 12345.678;
    std::stringstream buf;
    CheckpointWriter w(buf);
    w.add_meta("agent", "ppo");
    w.add("actor", net);
    w.add("log_std", extra);
    w.finish();
    const Checkpoint cp = read_checkpoint(buf);
    EXPECT_EQ(cp.meta_value("agent"), "ppo");
    EXPECT_EQ(cp.net("actor").sizes(), net.sizes());
    EXPECT_EQ(cp.net("actor").params(), net.params());
    EXPECT_EQ(cp.vector("log_std"), extra);
}

TEST(Checkpoint, CorruptInputRejected) {
    std::stringstream wrong_magic("something 1\nend\n");
    EXPECT_THROW(read_checkpoint(wrong_magic), Error);
    std::stringstream truncated("ensemble-trader-checkpoint 1\nblock v vector 3\n1\n2\n");
    EXPECT_THROW(read_checkpoint(truncated), Error);
    std::stringstream no_end("ensemble-trader-checkpoint 1\nblock v vector 1\n1\n");
    EXPECT_THROW(read_checkpoint(no_end), Error);
}
