#pragma once

#include <algorithm>
#include <atomic>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdm/error.hpp"
#include "sdm/net.hpp"
#include "sdm/rng.hpp"
#include "sdm/schedule.hpp"
#include "sdm/types.hpp"

namespace sdm {

/// Anything that predicts the injected noise from (x_t, t).
template <class D>
concept Denoiser = requires(const D& d, const PointBatch& x, std::span<const int> t, const NoiseSchedule& sch) {
    { d.predict_eps(x, t, sch) } -> std::convertible_to<PointBatch>;
};

/// A denoiser whose forward pass can be differentiated.
template <class D>
concept TrainableDenoiser = Denoiser<D> && requires(const D& d, const PointBatch& x, std::span<const int> t,
                                                    const NoiseSchedule& sch, const ForwardTape& tape) {
    { d.forward(x, t, sch) } -> std::same_as<std::pair<PointBatch, ForwardTape>>;
    { d.backward(tape, x) } -> std::same_as<NetGradients>;
};

/// Cheats by knowing the clean data: returns the exact noise that maps x0 to
/// x_t. Row i of the batch is paired with row i of x0.
class OracleDenoiser {
public:
    explicit OracleDenoiser(PointBatch x0) : x0_(std::move(x0)) {}

    PointBatch predict_eps(const PointBatch& x, std::span<const int> t, const NoiseSchedule& sch) const {
        if (x.rows() != x0_.rows() || x.cols() != x0_.cols())
            throw ArgumentError("oracle denoiser: batch does not match its clean data");
        PointBatch eps(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const int step = t.size() == 1 ? t[0] : t[static_cast<std::size_t>(i)];
            eps.row(i) = (x.row(i) - sch.alpha(step) * x0_.row(i)) / sch.sigma(step);
        }
        return eps;
    }

    const PointBatch& x0() const { return x0_; }

private:
    PointBatch x0_;
};

/// Counters used by tests to check which code paths ran.
namespace instrumentation {
inline std::atomic<std::uint64_t> chain_calls{0};
}

namespace detail {

inline void require_same_shape(const PointBatch& a, const PointBatch& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ArgumentError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()) + ")");
}

inline int step_at(std::span<const int> t, Eigen::Index i) {
    return t.size() == 1 ? t[0] : t[static_cast<std::size_t>(i)];
}

inline void check_steps(std::span<const int> t, Eigen::Index rows) {
    if (t.size() != 1 && static_cast<Eigen::Index>(t.size()) != rows)
        throw ArgumentError("timestep count must be 1 or match the batch size");
}

} // namespace detail

/// x_t = alpha_t x0 + sigma_t eps, with one step for the batch or one per row.
inline PointBatch forward_noise(const PointBatch& x0, std::span<const int> t, const PointBatch& eps,
                                const NoiseSchedule& sch) {
    detail::require_same_shape(x0, eps, "forward_noise");
    detail::check_steps(t, x0.rows());
    PointBatch xt(x0.rows(), x0.cols());
    for (Eigen::Index i = 0; i < x0.rows(); ++i) {
        const int step = detail::step_at(t, i);
        xt.row(i) = sch.alpha(step) * x0.row(i) + sch.sigma(step) * eps.row(i);
    }
    return xt;
}

inline PointBatch forward_noise(const PointBatch& x0, int t, const PointBatch& eps, const NoiseSchedule& sch) {
    return forward_noise(x0, std::span<const int>(&t, 1), eps, sch);
}

struct LossReport {
    double eps_loss = 0.0;
    double fidelity_loss = 0.0;
    double lambda = 1.0;
    double total = 0.0;

    static LossReport make(double eps, double fidelity, double lambda) {
        return {eps, fidelity, lambda, eps + lambda * fidelity};
    }
};

struct EpsLoss {
    double loss = 0.0;
    ParamVector grads; ///< empty unless the denoiser is trainable
};

/// Noise-prediction loss mean_i w_i |eps_i - eps_hat(x_t, t_i)|^2.
///
/// Unweighted: w_i = 1. Weighted: w_i = (SNR_{t_i-1} - SNR_{t_i}) / 2, the KL
/// between adjacent-step posteriors, which needs t_i >= 1.
template <Denoiser D>
EpsLoss eps_loss(const D& d, const PointBatch& x0, std::span<const int> t, const PointBatch& eps,
                 const NoiseSchedule& sch, bool weighted = false) {
    detail::require_same_shape(x0, eps, "eps_loss");
    detail::check_steps(t, x0.rows());
    const auto n = x0.rows();
    if (n == 0) throw ArgumentError("eps_loss: empty batch");

    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    if (weighted) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const int step = detail::step_at(t, i);
            if (step < 1) throw ArgumentError("weighted eps_loss needs t >= 1 (t = 0 has no predecessor)");
            w(i) = sch.kl_weight(step - 1, step);
        }
    }

    const PointBatch xt = forward_noise(x0, t, eps, sch);
    EpsLoss out;
    PointBatch eps_hat;
    std::optional<ForwardTape> tape;
    if constexpr (TrainableDenoiser<D>) {
        auto [y, tp] = d.forward(xt, t, sch);
        eps_hat = std::move(y);
        tape = std::move(tp);
    } else {
        eps_hat = d.predict_eps(xt, t, sch);
    }
    const PointBatch diff = eps - eps_hat;
    out.loss = (diff.rowwise().squaredNorm().array() * w.array()).sum() / static_cast<double>(n);
    if (!std::isfinite(out.loss)) throw NumericError("eps_loss is not finite");
    if constexpr (TrainableDenoiser<D>) {
        const PointBatch grad_out = (-2.0 / static_cast<double>(n)) * (diff.array().colwise() * w.array()).matrix();
        out.grads = d.backward(*tape, grad_out).params;
    }
    return out;
}

template <Denoiser D>
EpsLoss eps_loss(const D& d, const PointBatch& x0, int t, const PointBatch& eps, const NoiseSchedule& sch,
                 bool weighted = false) {
    return eps_loss(d, x0, std::span<const int>(&t, 1), eps, sch, weighted);
}

struct X0Prediction {
    PointBatch x0_hat;
    std::optional<ForwardTape> tape; ///< present for trainable denoisers
};

/// x0_hat = (x_t - sigma_t eps_hat(x_t, t)) / alpha_t.
template <Denoiser D>
X0Prediction predict_x0(const D& d, const PointBatch& xt, int t, const NoiseSchedule& sch) {
    const double a = sch.alpha(t);
    if (a < 1e-8) throw NumericError("predict_x0: alpha_t below 1e-8 at t = " + std::to_string(t));
    const std::span<const int> ts(&t, 1);
    X0Prediction out;
    PointBatch eps_hat;
    if constexpr (TrainableDenoiser<D>) {
        auto [y, tape] = d.forward(xt, ts, sch);
        eps_hat = std::move(y);
        out.tape = std::move(tape);
    } else {
        eps_hat = d.predict_eps(xt, ts, sch);
    }
    out.x0_hat = (xt - sch.sigma(t) * eps_hat) / a;
    return out;
}

/// Mean of q(x_s | x_t, x0).
inline PointBatch posterior_mean(const NoiseSchedule& sch, const PointBatch& xt, const PointBatch& x0, int s,
                                 int t) {
    if (s >= t) throw ArgumentError("posterior_mean requires s < t");
    detail::require_same_shape(xt, x0, "posterior_mean");
    const auto c = sch.transition_coeffs(s, t);
    const double cx = c.alpha_ts * sch.sigma2(s) / sch.sigma2(t);
    const double c0 = sch.alpha(s) * c.sigma2_ts / sch.sigma2(t);
    return cx * xt + c0 * x0;
}

/// One reverse step from t to s using the posterior with x0 replaced by its
/// prediction; `noise` is standard normal.
template <Denoiser D>
PointBatch ancestral_step(const D& d, const PointBatch& xt, int s, int t, const PointBatch& noise,
                          const NoiseSchedule& sch) {
    detail::require_same_shape(xt, noise, "ancestral_step");
    const PointBatch x0_hat = predict_x0(d, xt, t, sch).x0_hat;
    return posterior_mean(sch, xt, x0_hat, s, t) + std::sqrt(sch.posterior_variance(s, t)) * noise;
}

/// Re-noise a clean estimate to level s: alpha_s x0_hat + sigma_s noise.
inline PointBatch shortcut_step(const PointBatch& x0_hat, int s, const PointBatch& noise, const NoiseSchedule& sch) {
    detail::require_same_shape(x0_hat, noise, "shortcut_step");
    return sch.alpha(s) * x0_hat + sch.sigma(s) * noise;
}

/// Strictly descending steps t_K > ... > t_1 inside [1, T].
struct ChainSpec {
    std::vector<int> steps;

    int K() const { return static_cast<int>(steps.size()); }

    void validate(int T) const {
        if (steps.empty()) throw ArgumentError("chain needs at least one step");
        for (std::size_t i = 0; i < steps.size(); ++i) {
            if (steps[i] < 1 || steps[i] > T)
                throw ArgumentError("chain step " + std::to_string(steps[i]) + " outside [1, " + std::to_string(T) +
                                    "]");
            if (i > 0 && !(steps[i] < steps[i - 1])) throw ArgumentError("chain steps must be strictly descending");
        }
    }

    /// Inference spacing T, T - T/K, ..., rounded to integers.
    static ChainSpec evenly_spaced(int T, int K) {
        if (K < 1 || K > T) throw ArgumentError("evenly_spaced needs 1 <= K <= T");
        ChainSpec spec;
        for (int i = 0; i < K; ++i) {
            const double v = static_cast<double>(T) * (K - i) / K;
            spec.steps.push_back(static_cast<int>(std::lround(v)));
        }
        spec.validate(T);
        return spec;
    }

    /// K distinct steps uniform over [1, T], sorted descending, conditioned on
    /// the largest being at least T/2 (rejection sampling).
    static ChainSpec sample_training(int T, int K, Rng& rng) {
        if (K < 1 || K > T) throw ArgumentError("sample_training needs 1 <= K <= T");
        std::vector<int> pool(static_cast<std::size_t>(T));
        for (int i = 0; i < T; ++i) pool[static_cast<std::size_t>(i)] = i + 1;
        ChainSpec spec;
        for (;;) {
            // Partial Fisher-Yates: the first K entries become a uniform K-subset.
            for (int i = 0; i < K; ++i) {
                const int j = rng.uniform_int(i, T - 1);
                std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
            }
            spec.steps.assign(pool.begin(), pool.begin() + K);
            std::sort(spec.steps.begin(), spec.steps.end(), std::greater<>());
            if (2 * spec.steps.front() >= T) break;
        }
        return spec;
    }
};

/// Trajectory of one shortcut chain. Entry k of `states`, `x0_preds` and
/// `tapes` belongs to spec.steps[k]; noises[k] re-noised x0_preds[k] into
/// states[k + 1].
struct ChainState {
    ChainSpec spec;
    std::vector<PointBatch> states;
    std::vector<PointBatch> noises;
    std::vector<PointBatch> x0_preds;
    std::vector<ForwardTape> tapes;

    const PointBatch& output() const {
        if (x0_preds.empty()) throw StateError("chain has not been run");
        return x0_preds.back();
    }
};

/// Runs the shortcut chain from x_init at level spec.steps[0]: predict x0,
/// re-noise to the next level, repeat; the last prediction is the output.
/// `noises` holds the K - 1 standard-normal draws between levels.
template <Denoiser D>
ChainState run_chain(const D& d, const PointBatch& x_init, const ChainSpec& spec,
                     std::span<const PointBatch> noises, const NoiseSchedule& sch) {
    spec.validate(sch.T());
    const auto K = static_cast<std::size_t>(spec.K());
    if (noises.size() != K - 1)
        throw ArgumentError("run_chain: expected " + std::to_string(K - 1) + " noise batches, got " +
                            std::to_string(noises.size()));
    ++instrumentation::chain_calls;

    ChainState chain;
    chain.spec = spec;
    chain.states.reserve(K);
    chain.x0_preds.reserve(K);
    chain.states.push_back(x_init);
    for (std::size_t k = 0; k < K; ++k) {
        auto pred = predict_x0(d, chain.states[k], spec.steps[k], sch);
        if (pred.tape) chain.tapes.push_back(std::move(*pred.tape));
        chain.x0_preds.push_back(std::move(pred.x0_hat));
        if (k + 1 < K) {
            chain.noises.push_back(noises[k]);
            chain.states.push_back(shortcut_step(chain.x0_preds[k], spec.steps[k + 1], noises[k], sch));
        }
    }
    return chain;
}

enum class ChainGrad {
    full,      ///< differentiate through every step of the chain
    last_step, ///< only the final prediction receives gradient
};

/// Reverse-mode gradient of a loss on the chain output w.r.t. the network
/// parameters. Noises and the chain's starting point are constants.
inline ParamVector chain_backward(const DenoiserNet& net, const ChainState& chain, const PointBatch& grad_x0_hat,
                                  const NoiseSchedule& sch, ChainGrad mode = ChainGrad::full) {
    const auto K = chain.x0_preds.size();
    if (K == 0 || chain.tapes.size() != K) throw StateError("chain_backward: chain has no recorded tapes");
    detail::require_same_shape(chain.output(), grad_x0_hat, "chain_backward");
    ++instrumentation::chain_calls;

    ParamVector grads = ParamVector::Zero(net.param_count());
    PointBatch g = grad_x0_hat; // dL / d x0_preds[k]
    const std::size_t last = mode == ChainGrad::full ? 0 : K - 1;
    for (std::size_t k = K; k-- > last;) {
        const int t = chain.spec.steps[k];
        const double a = sch.alpha(t);
        // x0_hat = (x_t - sigma_t eps_hat(x_t)) / alpha_t
        const auto ng = net.backward(chain.tapes[k], (-sch.sigma(t) / a) * g);
        grads += ng.params;
        if (k == 0) break;
        const PointBatch g_state = g / a + ng.inputs;
        // x_t = alpha_t * x0_preds[k - 1] + sigma_t * noise
        g = a * g_state;
    }
    return grads;
}

/// mean_i |x0_i - x0_hat_i|^2.
inline double fidelity_loss(const PointBatch& x0, const PointBatch& x0_hat) {
    detail::require_same_shape(x0, x0_hat, "fidelity_loss");
    if (x0.rows() == 0) throw ArgumentError("fidelity_loss: empty batch");
    return (x0 - x0_hat).rowwise().squaredNorm().sum() / static_cast<double>(x0.rows());
}

/// d fidelity_loss / d x0_hat.
inline PointBatch fidelity_grad(const PointBatch& x0, const PointBatch& x0_hat) {
    detail::require_same_shape(x0, x0_hat, "fidelity_grad");
    return (2.0 / static_cast<double>(x0.rows())) * (x0_hat - x0);
}

/// Called with (number of reverse steps completed, current batch).
using SnapshotFn = std::function<void(int, const PointBatch&)>;

/// Ancestral sampling through every level T -> T-1 -> ... -> 0.
template <Denoiser D>
PointBatch sample_full(const D& d, Eigen::Index n, const NoiseSchedule& sch, std::uint64_t seed, int dim = 2,
                       const SnapshotFn& snapshot = {}) {
    if (n < 1) throw ArgumentError("sample_full: n must be >= 1");
    Rng rng = Rng::derive(seed, Stream::sample);
    PointBatch x = rng.normal_batch(n, dim);
    for (int t = sch.T(); t >= 1; --t) {
        const PointBatch noise = rng.normal_batch(n, dim);
        x = ancestral_step(d, x, t - 1, t, noise, sch);
        if (snapshot) snapshot(sch.T() - t + 1, x);
    }
    return x;
}

/// Shortcut chain from pure noise at level T; returns the whole trajectory.
template <Denoiser D>
ChainState sample_shortcut_chain(const D& d, Eigen::Index n, const ChainSpec& spec, const NoiseSchedule& sch,
                                 std::uint64_t seed, int dim = 2) {
    if (n < 1) throw ArgumentError("sample_shortcut: n must be >= 1");
    spec.validate(sch.T());
    if (spec.steps.front() != sch.T())
        throw ArgumentError("sample_shortcut: chain must start at T = " + std::to_string(sch.T()));
    Rng rng = Rng::derive(seed, Stream::sample);
    const PointBatch x_init = rng.normal_batch(n, dim);
    std::vector<PointBatch> noises;
    for (int k = 1; k < spec.K(); ++k) noises.push_back(rng.normal_batch(n, dim));
    return run_chain(d, x_init, spec, noises, sch);
}

template <Denoiser D>
PointBatch sample_shortcut(const D& d, Eigen::Index n, const ChainSpec& spec, const NoiseSchedule& sch,
                           std::uint64_t seed, int dim = 2) {
    return sample_shortcut_chain(d, n, spec, sch, seed, dim).output();
}

} // namespace sdm
