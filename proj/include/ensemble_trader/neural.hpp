#pragma once

// Small dense networks for the agents: tanh MLPs with analytic backprop, an
// Adam optimizer, a diagonal Gaussian policy head and a text checkpoint format.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ensemble_trader/error.hpp"

namespace ensemble_trader {

using Rng = std::mt19937_64;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Activations kept by a batched forward pass for the backward pass.
struct MlpCache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer, (in x N)
    Eigen::MatrixXd output;
};

struct MlpGradient {
    Eigen::VectorXd params;  // same layout as Mlp::params()
    Eigen::MatrixXd input;   // (in x N)
};

/// Dense chain input -> hidden... -> output with tanh on hidden layers and
/// identity on the output. All parameters live in one flat vector: for each
/// layer, the row-major (out x in) weight followed by the bias.
class Mlp {
public:
    Mlp() = default;

    explicit Mlp(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
        if (sizes_.size() < 2) throw Error(ErrorKind::ShapeError, "Mlp needs input and output sizes");
        std::size_t total = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            if (sizes_[l] == 0 || sizes_[l + 1] == 0) throw Error(ErrorKind::ShapeError, "Mlp layer of size 0");
            offsets_.push_back(total);
            total += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
        }
        params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
    }

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    static Mlp glorot(std::vector<std::size_t> sizes, Rng& rng) {
        Mlp net(std::move(sizes));
        for (std::size_t l = 0; l < net.num_layers(); ++l) {
            const double limit = std::sqrt(6.0 / static_cast<double>(net.sizes_[l] + net.sizes_[l + 1]));
            std::uniform_real_distribution<double> dist(-limit, limit);
            auto w = net.weight(l);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
        }
        return net;
    }

    [[nodiscard]] const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
    [[nodiscard]] std::size_t num_layers() const noexcept { return offsets_.size(); }
    [[nodiscard]] std::size_t input_size() const noexcept { return sizes_.front(); }
    [[nodiscard]] std::size_t output_size() const noexcept { return sizes_.back(); }
    [[nodiscard]] Eigen::VectorXd& params() noexcept { return params_; }
    [[nodiscard]] const Eigen::VectorXd& params() const noexcept { return params_; }

    Eigen::Map<RowMajorMatrix> weight(std::size_t l) {
        return {params_.data() + offsets_[l], rows(l), cols(l)};
    }
    [[nodiscard]] Eigen::Map<const RowMajorMatrix> weight(std::size_t l) const {
        return {params_.data() + offsets_[l], rows(l), cols(l)};
    }
    Eigen::Map<Eigen::VectorXd> bias(std::size_t l) {
        return {params_.data() + offsets_[l] + rows(l) * cols(l), rows(l)};
    }
    [[nodiscard]] Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const {
        return {params_.data() + offsets_[l] + rows(l) * cols(l), rows(l)};
    }

    [[nodiscard]] Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
        check_input(x.size());
        Eigen::VectorXd h = x;
        for (std::size_t l = 0; l < num_layers(); ++l) {
            Eigen::VectorXd z = weight(l) * h + bias(l);
            h = (l + 1 < num_layers()) ? Eigen::VectorXd(z.array().tanh()) : z;
        }
        return h;
    }

    /// Columns of `x` are samples.
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x, MlpCache* cache = nullptr) const {
        check_input(x.rows());
        if (cache) cache->inputs.clear();
        Eigen::MatrixXd h = x;
        for (std::size_t l = 0; l < num_layers(); ++l) {
            if (cache) cache->inputs.push_back(h);
            Eigen::MatrixXd z = weight(l) * h;
            z.colwise() += bias(l);
            h = (l + 1 < num_layers()) ? Eigen::MatrixXd(z.array().tanh()) : z;
        }
        if (cache) cache->output = h;
        return h;
    }

    /// Gradient of sum over samples of <output, upstream> with respect to the
    /// parameters and the input.
    [[nodiscard]] MlpGradient backward(const MlpCache& cache, const Eigen::MatrixXd& upstream) const {
        if (cache.inputs.size() != num_layers() || upstream.rows() != cache.output.rows() ||
            upstream.cols() != cache.output.cols()) {
            throw Error(ErrorKind::ShapeError, "Mlp::backward: upstream gradient does not match cache");
        }
        MlpGradient grad{Eigen::VectorXd::Zero(params_.size()), {}};
        Eigen::MatrixXd delta = upstream;  // d/dz of the current layer
        for (std::size_t l = num_layers(); l-- > 0;) {
            const Eigen::MatrixXd& in = cache.inputs[l];
            Eigen::Map<RowMajorMatrix> gw(grad.params.data() + offsets_[l], rows(l), cols(l));
            Eigen::Map<Eigen::VectorXd> gb(grad.params.data() + offsets_[l] + rows(l) * cols(l), rows(l));
            gw.noalias() = delta * in.transpose();
            gb = delta.rowwise().sum();
            Eigen::MatrixXd d_in = weight(l).transpose() * delta;
            if (l > 0) {
                // `in` is tanh output of the previous layer.
                d_in.array() *= (1.0 - in.array().square());
            }
            delta = std::move(d_in);
        }
        grad.input = std::move(delta);
        return grad;
    }

    /// Single-sample convenience wrapper.
    [[nodiscard]] MlpGradient backward(const Eigen::VectorXd& x, const Eigen::VectorXd& upstream) const {
        MlpCache cache;
        forward_batch(x, &cache);
        return backward(cache, upstream);
    }

private:
    [[nodiscard]] Eigen::Index rows(std::size_t l) const { return static_cast<Eigen::Index>(sizes_[l + 1]); }
    [[nodiscard]] Eigen::Index cols(std::size_t l) const { return static_cast<Eigen::Index>(sizes_[l]); }
    void check_input(Eigen::Index n) const {
        if (sizes_.empty() || static_cast<std::size_t>(n) != sizes_.front()) {
            throw Error(ErrorKind::ShapeError, "Mlp: input length " + std::to_string(n) + " does not match " +
                                                   std::to_string(sizes_.empty() ? 0 : sizes_.front()));
        }
    }

    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;
    Eigen::VectorXd params_;
};

// --------------------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias-corrected moments. A non-finite gradient leaves both the
/// parameters and the optimizer state untouched and throws GradInvalid.
class Adam {
public:
    Adam() = default;
    Adam(Eigen::Index size, AdamConfig config)
        : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
        if (grad.size() != m_.size() || params.size() != m_.size()) {
            throw Error(ErrorKind::ShapeError, "Adam::step: size mismatch");
        }
        if (!grad.allFinite()) {
            throw Error(ErrorKind::GradInvalid, "non-finite gradient, update skipped");
        }
        ++steps_;
        m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
        v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
        params.array() -= config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
    }

    [[nodiscard]] std::int64_t steps() const noexcept { return steps_; }
    [[nodiscard]] const AdamConfig& config() const noexcept { return config_; }
    [[nodiscard]] const Eigen::VectorXd& first_moment() const noexcept { return m_; }
    [[nodiscard]] const Eigen::VectorXd& second_moment() const noexcept { return v_; }

private:
    AdamConfig config_;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
    std::int64_t steps_ = 0;
};

// --------------------------------------------------------------------------

/// Diagonal Gaussian with an MLP mean and a state-independent log std.
struct GaussianPolicy {
    static constexpr double kMinLogStd = -6.907755278982137;  // log(1e-3)
    static constexpr double kMaxLogStd = 2.302585092994046;   // log(10)

    Mlp mean;
    Eigen::VectorXd log_std;

    static GaussianPolicy create(std::vector<std::size_t> sizes, double initial_std, Rng& rng) {
        GaussianPolicy p{Mlp::glorot(std::move(sizes), rng), {}};
        p.log_std = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(p.mean.output_size()), std::log(initial_std));
        p.clamp();
        return p;
    }

    void clamp() { log_std = log_std.cwiseMax(kMinLogStd).cwiseMin(kMaxLogStd); }
    [[nodiscard]] Eigen::VectorXd stddev() const { return log_std.array().exp(); }
};

inline double gaussian_log_prob(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std,
                                const Eigen::VectorXd& action) {
    const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double lp = 0.0;
    for (Eigen::Index d = 0; d < mean.size(); ++d) {
        const double z = (action(d) - mean(d)) / std::exp(log_std(d));
        lp += -0.5 * z * z - log_std(d) - half_log_two_pi;
    }
    return lp;
}

struct GaussianSample {
    Eigen::VectorXd action;  // unclipped
    double log_prob = 0.0;
};

inline GaussianSample gaussian_sample(const GaussianPolicy& policy, const Eigen::VectorXd& state, Rng& rng) {
    const Eigen::VectorXd mean = policy.mean.forward(state);
    std::normal_distribution<double> noise(0.0, 1.0);
    GaussianSample s;
    s.action.resize(mean.size());
    for (Eigen::Index d = 0; d < mean.size(); ++d) s.action(d) = mean(d) + std::exp(policy.log_std(d)) * noise(rng);
    s.log_prob = gaussian_log_prob(mean, policy.log_std, s.action);
    return s;
}

/// Gradients of sum_i weight_i * log pi(a_i | s_i) for a batch (columns are
/// samples). Returns gradients for the mean net parameters and log std.
struct PolicyGradient {
    Eigen::VectorXd mean_params;
    Eigen::VectorXd log_std;
};

inline PolicyGradient log_prob_gradient(const GaussianPolicy& policy, const Eigen::MatrixXd& states,
                                        const Eigen::MatrixXd& actions, const Eigen::VectorXd& weights) {
    MlpCache cache;
    const Eigen::MatrixXd means = policy.mean.forward_batch(states, &cache);
    const Eigen::ArrayXd var = (2.0 * policy.log_std.array()).exp();
    Eigen::MatrixXd d_mean(means.rows(), means.cols());
    PolicyGradient g{{}, Eigen::VectorXd::Zero(policy.log_std.size())};
    for (Eigen::Index i = 0; i < means.cols(); ++i) {
        const Eigen::ArrayXd diff = (actions.col(i) - means.col(i)).array();
        d_mean.col(i) = (weights(i) * diff / var).matrix();
        g.log_std.array() += weights(i) * (diff.square() / var - 1.0);
    }
    g.mean_params = policy.mean.backward(cache, d_mean).params;
    return g;
}

// --------------------------------------------------------------------------
// Checkpoints: "ensemble-trader-checkpoint 1", then named blocks. An mlp block
// header lists the layer sizes; values follow one per line, row-major weight
// then bias per layer.

inline constexpr const char* kCheckpointMagic = "ensemble-trader-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {
inline void write_values(std::ostream& out, const Eigen::VectorXd& values) {
    char buf[40];
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g\n", values(i));
        out << buf;
    }
}
inline Eigen::VectorXd read_values(std::istream& in, std::size_t count) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i) {
        std::string token;
        if (!(in >> token)) throw Error(ErrorKind::InputInvalid, "checkpoint truncated");
        try {
            v(static_cast<Eigen::Index>(i)) = std::stod(token);
        } catch (const std::exception&) {
            throw Error(ErrorKind::InputInvalid, "checkpoint value '" + token + "' is not a number");
        }
    }
    return v;
}
}  // namespace detail

class CheckpointWriter {
public:
    explicit CheckpointWriter(std::ostream& out) : out_(out) { out_ << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'; }

    void add(const std::string& name, const Mlp& net) {
        out_ << "block " << name << " mlp " << net.sizes().size();
        for (auto s : net.sizes()) out_ << ' ' << s;
        out_ << '\n';
        detail::write_values(out_, net.params());
    }
    void add(const std::string& name, const Eigen::VectorXd& values) {
        out_ << "block " << name << " vector " << values.size() << '\n';
        detail::write_values(out_, values);
    }
    void add_meta(const std::string& key, const std::string& value) { out_ << "meta " << key << ' ' << value << '\n'; }
    void finish() { out_ << "end\n"; }

private:
    std::ostream& out_;
};

struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, Mlp>> nets;
    std::vector<std::pair<std::string, Eigen::VectorXd>> vectors;

    [[nodiscard]] const Mlp& net(const std::string& name) const {
        for (const auto& [n, m] : nets) if (n == name) return m;
        throw Error(ErrorKind::InputInvalid, "checkpoint has no network '" + name + "'");
    }
    [[nodiscard]] const Eigen::VectorXd& vector(const std::string& name) const {
        for (const auto& [n, v] : vectors) if (n == name) return v;
        throw Error(ErrorKind::InputInvalid, "checkpoint has no vector '" + name + "'");
    }
    [[nodiscard]] std::string meta_value(const std::string& key) const {
        for (const auto& [k, v] : meta) if (k == key) return v;
        throw Error(ErrorKind::InputInvalid, "checkpoint has no meta '" + key + "'");
    }
};

inline Checkpoint read_checkpoint(std::istream& in) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != kCheckpointMagic) {
        throw Error(ErrorKind::InputInvalid, "not a checkpoint file");
    }
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::InputInvalid, "unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint cp;
    std::string word;
    while (in >> word) {
        if (word == "end") return cp;
        if (word == "meta") {
            std::string key, value;
            in >> key >> value;
            cp.meta.emplace_back(key, value);
            continue;
        }
        if (word != "block") throw Error(ErrorKind::InputInvalid, "unexpected token '" + word + "'");
        std::string name, type;
        std::size_t count = 0;
        if (!(in >> name >> type >> count)) throw Error(ErrorKind::InputInvalid, "bad block header");
        if (type == "mlp") {
            std::vector<std::size_t> sizes(count);
            for (auto& s : sizes) in >> s;
            Mlp net(sizes);
            net.params() = detail::read_values(in, static_cast<std::size_t>(net.params().size()));
            cp.nets.emplace_back(name, std::move(net));
        } else if (type == "vector") {
            cp.vectors.emplace_back(name, detail::read_values(in, count));
        } else {
            throw Error(ErrorKind::InputInvalid, "unknown block type '" + type + "'");
        }
    }
    throw Error(ErrorKind::InputInvalid, "checkpoint missing end marker");
}

}  // namespace ensemble_trader
