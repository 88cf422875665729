#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sdm/error.hpp"
#include "sdm/rng.hpp"
#include "sdm/schedule.hpp"
#include "sdm/types.hpp"

namespace sdm {

/// What scalar the time embedding is computed from.
enum class TimeInput {
    normalized, ///< t / T
    gamma,      ///< (gamma_t - gamma_0) / (gamma_T - gamma_0)
};

struct NetConfig {
    int input_dim = 2;
    int hidden_dim = 128;
    int n_freqs = 6;
    bool time_embed = true;
    int n_time_freqs = 6;
    TimeInput time_input = TimeInput::normalized;

    void validate() const {
        if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
        if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
        if (n_freqs < 1) throw ConfigError("n_freqs must be >= 1");
        if (time_embed && n_time_freqs < 0) throw ConfigError("n_time_freqs must be >= 0");
    }

    int time_width() const { return time_embed ? 1 + 2 * n_time_freqs : 0; }
    int feature_dim() const { return input_dim * (1 + 2 * n_freqs) + time_width(); }

    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

namespace detail {

inline double frequency(int j) { return std::ldexp(std::numbers::pi, j); }

inline void check_timesteps(std::span<const int> t, Eigen::Index rows, const NoiseSchedule& sch) {
    if (t.size() != 1 && static_cast<Eigen::Index>(t.size()) != rows)
        throw ArgumentError("timestep count " + std::to_string(t.size()) +
                            " must be 1 or match batch size " + std::to_string(rows));
    for (int v : t)
        if (v < 0 || v > sch.T())
            throw ArgumentError("timestep " + std::to_string(v) + " outside [0, " + std::to_string(sch.T()) + "]");
}

inline double time_value(int t, const NoiseSchedule& sch, TimeInput mode) {
    if (mode == TimeInput::gamma)
        return (sch.gamma(t) - sch.gamma(0)) / (sch.gamma(sch.T()) - sch.gamma(0));
    return static_cast<double>(t) / sch.T();
}

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

inline double silu_grad(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
}

} // namespace detail

/// Fourier feature expansion of points plus the time embedding.
///
/// Each coordinate c becomes [c, sin(w_0 c), cos(w_0 c), ..., sin(w_{n-1} c), cos(w_{n-1} c)]
/// with w_j = 2^j pi; the time scalar tau gets the same treatment with
/// n_time_freqs bands and is appended after all coordinates. `t` holds either
/// one step shared by the whole batch or one step per row.
inline Eigen::MatrixXd featurize(const PointBatch& x, std::span<const int> t, const NoiseSchedule& sch,
                                 const NetConfig& cfg) {
    if (x.cols() != cfg.input_dim)
        throw ArgumentError("featurize: expected " + std::to_string(cfg.input_dim) + " columns, got " +
                            std::to_string(x.cols()));
    if (!x.allFinite()) throw NumericError("featurize: non-finite input");
    detail::check_timesteps(t, x.rows(), sch);

    const int per_coord = 1 + 2 * cfg.n_freqs;
    Eigen::MatrixXd f(x.rows(), cfg.feature_dim());
    for (int c = 0; c < cfg.input_dim; ++c) {
        const int base = c * per_coord;
        f.col(base) = x.col(c);
        for (int j = 0; j < cfg.n_freqs; ++j) {
            const double w = detail::frequency(j);
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                f(i, base + 1 + 2 * j) = std::sin(w * x(i, c));
                f(i, base + 2 + 2 * j) = std::cos(w * x(i, c));
            }
        }
    }
    if (cfg.time_embed) {
        const int base = cfg.input_dim * per_coord;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const int step = t.size() == 1 ? t[0] : t[static_cast<std::size_t>(i)];
            const double tau = detail::time_value(step, sch, cfg.time_input);
            f(i, base) = tau;
            for (int j = 0; j < cfg.n_time_freqs; ++j) {
                const double w = detail::frequency(j);
                f(i, base + 1 + 2 * j) = std::sin(w * tau);
                f(i, base + 2 + 2 * j) = std::cos(w * tau);
            }
        }
    }
    return f;
}

/// Everything backward() needs from one forward pass.
struct ForwardTape {
    Eigen::MatrixXd features;
    Eigen::MatrixXd z1, h1;
    Eigen::MatrixXd z2, h2;

    Eigen::Index rows() const { return features.rows(); }
};

struct NetGradients {
    ParamVector params;
    PointBatch inputs;
};

/// Noise predictor: Fourier features followed by three affine layers with
/// SiLU between them (feature_dim -> hidden -> hidden -> input_dim).
///
/// All parameters live in one flat vector laid out as W1, b1, W2, b2, W3, b3
/// (weights column-major, shape out x in), which keeps the optimizer and the
/// checkpoint format oblivious to the architecture.
class DenoiserNet {
public:
    using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
    using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;
    using VectorMap = Eigen::Map<Eigen::VectorXd>;
    using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

    /// All-zero parameters.
    explicit DenoiserNet(const NetConfig& config) : config_(config) {
        config.validate();
        params_ = ParamVector::Zero(param_count(config));
    }

    /// Glorot-uniform weights, zero biases, output layer shrunk by 0.01.
    static DenoiserNet initialized(const NetConfig& config, Rng& rng) {
        DenoiserNet net(config);
        const auto fill = [&rng](MatrixMap w, double scale) {
            const double limit = scale * std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = limit * (2.0 * rng.uniform() - 1.0);
        };
        fill(net.w1(), 1.0);
        fill(net.w2(), 1.0);
        fill(net.w3(), 0.01);
        return net;
    }

    static Eigen::Index param_count(const NetConfig& c) {
        const Eigen::Index f = c.feature_dim(), h = c.hidden_dim, d = c.input_dim;
        return h * f + h + h * h + h + d * h + d;
    }

    const NetConfig& config() const { return config_; }
    Eigen::Index param_count() const { return params_.size(); }
    ParamVector& params() { return params_; }
    const ParamVector& params() const { return params_; }

    void set_params(const ParamVector& p) {
        if (p.size() != params_.size())
            throw ArgumentError("parameter vector has " + std::to_string(p.size()) + " entries, expected " +
                                std::to_string(params_.size()));
        params_ = p;
    }

    MatrixMap w1() { return {params_.data() + off_w1(), hid(), feat()}; }
    VectorMap b1() { return {params_.data() + off_b1(), hid()}; }
    MatrixMap w2() { return {params_.data() + off_w2(), hid(), hid()}; }
    VectorMap b2() { return {params_.data() + off_b2(), hid()}; }
    MatrixMap w3() { return {params_.data() + off_w3(), out(), hid()}; }
    VectorMap b3() { return {params_.data() + off_b3(), out()}; }
    ConstMatrixMap w1() const { return {params_.data() + off_w1(), hid(), feat()}; }
    ConstVectorMap b1() const { return {params_.data() + off_b1(), hid()}; }
    ConstMatrixMap w2() const { return {params_.data() + off_w2(), hid(), hid()}; }
    ConstVectorMap b2() const { return {params_.data() + off_b2(), hid()}; }
    ConstMatrixMap w3() const { return {params_.data() + off_w3(), out(), hid()}; }
    ConstVectorMap b3() const { return {params_.data() + off_b3(), out()}; }

    /// eps_hat(x_t, t) together with the tape for backward().
    std::pair<PointBatch, ForwardTape> forward(const PointBatch& x, std::span<const int> t,
                                               const NoiseSchedule& sch) const {
        ForwardTape tape;
        tape.features = featurize(x, t, sch, config_);
        tape.z1.noalias() = tape.features * w1().transpose();
        tape.z1.rowwise() += b1().transpose();
        tape.h1 = tape.z1.unaryExpr(&detail::silu);
        tape.z2.noalias() = tape.h1 * w2().transpose();
        tape.z2.rowwise() += b2().transpose();
        tape.h2 = tape.z2.unaryExpr(&detail::silu);
        PointBatch y;
        y.noalias() = tape.h2 * w3().transpose();
        y.rowwise() += b3().transpose();
        if (!y.allFinite()) throw NumericError("denoiser produced non-finite output");
        return {std::move(y), std::move(tape)};
    }

    std::pair<PointBatch, ForwardTape> forward(const PointBatch& x, int t, const NoiseSchedule& sch) const {
        return forward(x, std::span<const int>(&t, 1), sch);
    }

    PointBatch predict_eps(const PointBatch& x, std::span<const int> t, const NoiseSchedule& sch) const {
        return forward(x, t, sch).first;
    }

    /// Gradients of L w.r.t. parameters and inputs given dL/d(eps_hat).
    NetGradients backward(const ForwardTape& tape, const PointBatch& grad_out) const {
        if (grad_out.rows() != tape.rows() || grad_out.cols() != config_.input_dim)
            throw ArgumentError("backward: upstream gradient shape does not match the tape");
        if (tape.features.cols() != config_.feature_dim() || tape.h2.cols() != config_.hidden_dim)
            throw ArgumentError("backward: tape was produced by a different architecture");

        NetGradients g;
        g.params.resize(params_.size());
        MatrixMap gw1(g.params.data() + off_w1(), hid(), feat());
        VectorMap gb1(g.params.data() + off_b1(), hid());
        MatrixMap gw2(g.params.data() + off_w2(), hid(), hid());
        VectorMap gb2(g.params.data() + off_b2(), hid());
        MatrixMap gw3(g.params.data() + off_w3(), out(), hid());
        VectorMap gb3(g.params.data() + off_b3(), out());

        gw3.noalias() = grad_out.transpose() * tape.h2;
        gb3 = grad_out.colwise().sum().transpose();

        Eigen::MatrixXd dz2 = grad_out * w3();
        dz2.array() *= tape.z2.unaryExpr(&detail::silu_grad).array();
        gw2.noalias() = dz2.transpose() * tape.h1;
        gb2 = dz2.colwise().sum().transpose();

        Eigen::MatrixXd dz1 = dz2 * w2();
        dz1.array() *= tape.z1.unaryExpr(&detail::silu_grad).array();
        gw1.noalias() = dz1.transpose() * tape.features;
        gb1 = dz1.colwise().sum().transpose();

        const Eigen::MatrixXd df = dz1 * w1();
        // d sin(w c)/dc = w cos(w c) and d cos(w c)/dc = -w sin(w c); both are
        // already sitting in the feature matrix.
        const int per_coord = 1 + 2 * config_.n_freqs;
        g.inputs.resize(tape.rows(), config_.input_dim);
        for (int c = 0; c < config_.input_dim; ++c) {
            const int base = c * per_coord;
            g.inputs.col(c) = df.col(base);
            for (int j = 0; j < config_.n_freqs; ++j) {
                const double w = detail::frequency(j);
                g.inputs.col(c).array() +=
                    w * (df.col(base + 1 + 2 * j).array() * tape.features.col(base + 2 + 2 * j).array() -
                         df.col(base + 2 + 2 * j).array() * tape.features.col(base + 1 + 2 * j).array());
            }
        }
        return g;
    }

private:
    Eigen::Index feat() const { return config_.feature_dim(); }
    Eigen::Index hid() const { return config_.hidden_dim; }
    Eigen::Index out() const { return config_.input_dim; }
    Eigen::Index off_w1() const { return 0; }
    Eigen::Index off_b1() const { return off_w1() + hid() * feat(); }
    Eigen::Index off_w2() const { return off_b1() + hid(); }
    Eigen::Index off_b2() const { return off_w2() + hid() * hid(); }
    Eigen::Index off_w3() const { return off_b2() + hid(); }
    Eigen::Index off_b3() const { return off_w3() + out() * hid(); }

    NetConfig config_;
    ParamVector params_;
};

} // namespace sdm
