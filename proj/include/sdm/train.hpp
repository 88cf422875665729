#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sdm/adam.hpp"
#include "sdm/data.hpp"
#include "sdm/diffusion.hpp"
#include "sdm/error.hpp"
#include "sdm/eval.hpp"
#include "sdm/net.hpp"
#include "sdm/rng.hpp"
#include "sdm/schedule.hpp"

namespace sdm {

enum class TrainMode { baseline, shortcut };
enum class ChainInit { teacher_forced, pure_noise };

struct TrainConfig {
    TrainMode mode = TrainMode::shortcut;
    int T = 200;
    int K = 10;
    int epochs = 2000;
    int batch_size = 0; ///< 0 = full batch
    double lr = 1e-3;
    double lambda_fidelity = 1.0;
    ChainGrad chain_grad = ChainGrad::full;
    ChainInit chain_init = ChainInit::teacher_forced;
    bool weighted_eps_loss = false;
    bool combined_step = false;
    std::uint64_t seed = 0;
    int eval_every = 0;       ///< 0 disables periodic evaluation
    int eval_samples = 1024;
    int full_eval_every = 10; ///< every n-th evaluation also runs the full sampler (0 = never)

    void validate() const {
        if (T < 2) throw ConfigError("T must be >= 2");
        if (K < 1) throw ConfigError("K must be >= 1");
        if (K > T) throw ConfigError("K must be <= T");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        if (!(lambda_fidelity >= 0.0)) throw ConfigError("lambda_fidelity must be >= 0");
        if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
        if (eval_samples < 1) throw ConfigError("eval_samples must be >= 1");
        if (full_eval_every < 0) throw ConfigError("full_eval_every must be >= 0");
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Everything that changes while training.
struct TrainState {
    DenoiserNet net;
    AdamState opt;          ///< ε step (and the combined step)
    AdamState opt_fidelity; ///< separate fidelity step
    int epoch = 0;          ///< epochs completed

    static TrainState fresh(const NetConfig& net_cfg, const TrainConfig& cfg) {
        Rng rng = Rng::derive(cfg.seed, Stream::init);
        TrainState s{DenoiserNet::initialized(net_cfg, rng), {}, {}, 0};
        s.opt = AdamState(s.net.param_count(), cfg.lr);
        s.opt_fidelity = AdamState(s.net.param_count(), cfg.lr);
        return s;
    }
};

struct TrainRecord {
    int epoch = 0;
    double eps_loss = 0.0;
    double fidelity_loss = 0.0;
    std::optional<MetricReport> shortcut_metrics;
    std::optional<MetricReport> full_metrics;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;

    static constexpr const char* csv_header = "epoch,eps_loss,fidelity_loss,energy_distance,chamfer,seconds";

    /// One CSV row; metric fields stay empty for epochs without evaluation.
    static std::string csv_row(const TrainRecord& r) {
        std::string row = std::to_string(r.epoch) + "," + format_double(r.eps_loss) + "," +
                          format_double(r.fidelity_loss) + ",";
        if (r.shortcut_metrics)
            row += format_double(r.shortcut_metrics->energy_distance) + "," +
                   format_double(r.shortcut_metrics->chamfer);
        else
            row += ",";
        return row + "," + format_double(r.seconds);
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out << csv_header << '\n';
        for (const auto& r : records) out << csv_row(r) << '\n';
        if (!out) throw IoError("failed writing '" + path + "'");
    }
};

namespace detail {

inline std::uint64_t batch_index(int epoch, std::size_t batch) {
    return (static_cast<std::uint64_t>(epoch) << 24) | static_cast<std::uint64_t>(batch);
}

inline void require_finite(double v, const char* what, int epoch) {
    if (!std::isfinite(v))
        throw NumericError(std::string(what) + " became non-finite at epoch " + std::to_string(epoch));
}

} // namespace detail

/// Noise-prediction half of a training step: per-element
/// t ~ U{1..T}, eps ~ N(0, I). Returns the loss and its parameter gradient.
inline EpsLoss eps_objective(const DenoiserNet& net, const PointBatch& x0, const TrainConfig& cfg,
                             const NoiseSchedule& sch, int epoch, std::size_t batch) {
    Rng t_rng = Rng::derive(cfg.seed, Stream::timestep, detail::batch_index(epoch, batch));
    Rng e_rng = Rng::derive(cfg.seed, Stream::eps_noise, detail::batch_index(epoch, batch));
    std::vector<int> t(static_cast<std::size_t>(x0.rows()));
    for (auto& v : t) v = t_rng.uniform_int(1, cfg.T);
    const PointBatch eps = e_rng.normal_batch(x0.rows(), x0.cols());
    auto out = eps_loss(net, x0, t, eps, sch, cfg.weighted_eps_loss);
    detail::require_finite(out.loss, "eps loss", epoch);
    return out;
}

struct FidelityObjective {
    double loss = 0.0;
    ParamVector grads;
};

/// Shortcut-chain half: sample K levels, start the chain at the top level,
/// run it, and differentiate |x0 - x0_hat|^2 back through it.
inline FidelityObjective fidelity_objective(const DenoiserNet& net, const PointBatch& x0, const TrainConfig& cfg,
                                            const NoiseSchedule& sch, int epoch, std::size_t batch) {
    Rng step_rng = Rng::derive(cfg.seed, Stream::chain_steps, detail::batch_index(epoch, batch));
    Rng noise_rng = Rng::derive(cfg.seed, Stream::chain_noise, detail::batch_index(epoch, batch));
    const ChainSpec spec = ChainSpec::sample_training(cfg.T, cfg.K, step_rng);
    const PointBatch start_noise = noise_rng.normal_batch(x0.rows(), x0.cols());
    const PointBatch x_init = cfg.chain_init == ChainInit::teacher_forced
                                  ? forward_noise(x0, spec.steps.front(), start_noise, sch)
                                  : start_noise;
    std::vector<PointBatch> noises;
    for (int k = 1; k < spec.K(); ++k) noises.push_back(noise_rng.normal_batch(x0.rows(), x0.cols()));

    const ChainState chain = run_chain(net, x_init, spec, noises, sch);
    FidelityObjective out;
    out.loss = fidelity_loss(x0, chain.output());
    detail::require_finite(out.loss, "fidelity loss", epoch);
    out.grads = chain_backward(net, chain, fidelity_grad(x0, chain.output()), sch, cfg.chain_grad);
    return out;
}

/// Row order of the minibatches for one epoch.
inline std::vector<Eigen::Index> epoch_order(Eigen::Index n, const TrainConfig& cfg, int epoch) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    if (cfg.batch_size > 0 && cfg.batch_size < n) {
        Rng rng = Rng::derive(cfg.seed, Stream::shuffle, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng.engine());
    }
    return order;
}

/// One epoch of shortcut-chain training (or of the noise-prediction baseline).
///
/// Per minibatch: a gradient step on the noise-prediction loss, then, in
/// shortcut mode, a second step on lambda * fidelity loss of a freshly
/// sampled chain. With combined_step both gradients are summed into a single
/// step taken at the same parameters.
inline LossReport train_epoch(TrainState& state, const PointBatch& data, const TrainConfig& cfg,
                              const NoiseSchedule& sch) {
    if (data.rows() < 1) throw ArgumentError("train_epoch: empty dataset");
    if (cfg.T != sch.T()) throw ConfigError("train config T does not match the schedule");
    if (data.cols() != state.net.config().input_dim) throw ArgumentError("train_epoch: data dimension mismatch");

    const int epoch = state.epoch + 1;
    const Eigen::Index n = data.rows();
    const Eigen::Index bs = cfg.batch_size > 0 ? std::min<Eigen::Index>(cfg.batch_size, n) : n;
    const auto order = epoch_order(n, cfg, epoch);

    double eps_sum = 0.0, fid_sum = 0.0;
    std::size_t batch = 0;
    for (Eigen::Index start = 0; start < n; start += bs, ++batch) {
        const Eigen::Index rows = std::min(bs, n - start);
        PointBatch x0(rows, data.cols());
        for (Eigen::Index i = 0; i < rows; ++i) x0.row(i) = data.row(order[static_cast<std::size_t>(start + i)]);

        const EpsLoss eps = eps_objective(state.net, x0, cfg, sch, epoch, batch);
        eps_sum += eps.loss * static_cast<double>(rows);
        if (cfg.mode == TrainMode::baseline) {
            adam_step(state.net.params(), eps.grads, state.opt);
            continue;
        }
        if (cfg.combined_step) {
            const auto fid = fidelity_objective(state.net, x0, cfg, sch, epoch, batch);
            fid_sum += fid.loss * static_cast<double>(rows);
            adam_step(state.net.params(), eps.grads + cfg.lambda_fidelity * fid.grads, state.opt);
        } else {
            adam_step(state.net.params(), eps.grads, state.opt);
            const auto fid = fidelity_objective(state.net, x0, cfg, sch, epoch, batch);
            fid_sum += fid.loss * static_cast<double>(rows);
            adam_step(state.net.params(), cfg.lambda_fidelity * fid.grads, state.opt_fidelity);
        }
    }
    state.epoch = epoch;
    return LossReport::make(eps_sum / static_cast<double>(n), fid_sum / static_cast<double>(n), cfg.lambda_fidelity);
}

/// Samples with the K-step shortcut sampler (and optionally the full
/// sampler) and scores the result against `reference`.
inline std::pair<MetricReport, std::optional<MetricReport>> evaluate_model(const DenoiserNet& net,
                                                                           const PointBatch& reference,
                                                                           const TrainConfig& cfg,
                                                                           const NoiseSchedule& sch, int epoch,
                                                                           bool with_full) {
    const std::uint64_t seed = Rng::derive(cfg.seed, Stream::eval, static_cast<std::uint64_t>(epoch)).engine()();
    const PointBatch gen = sample_shortcut(net, cfg.eval_samples, ChainSpec::evenly_spaced(cfg.T, cfg.K), sch, seed);
    auto shortcut = evaluate(gen, reference, "shortcut-" + std::to_string(cfg.K));
    shortcut.epoch = epoch;
    std::optional<MetricReport> full;
    if (with_full) {
        full = evaluate(sample_full(net, cfg.eval_samples, sch, seed), reference, "full");
        full->epoch = epoch;
    }
    return {shortcut, full};
}

struct FitHooks {
    /// After every completed epoch, with its log record.
    std::function<void(const TrainState&, const TrainRecord&)> on_epoch;
};

/// Trains from `state` (fresh or resumed) until cfg.epochs epochs are done.
/// On a numeric failure `state` is rolled back to the last completed epoch
/// before the error propagates.
inline TrainLog fit(TrainState& state, const PointBatch& data, const TrainConfig& cfg, const NoiseSchedule& sch,
                    const FitHooks& hooks = {}) {
    cfg.validate();
    if (state.epoch > cfg.epochs) throw ConfigError("state is already past the configured epoch count");
    TrainLog log;
    while (state.epoch < cfg.epochs) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainState last_good = state;
        TrainRecord rec;
        try {
            const LossReport loss = train_epoch(state, data, cfg, sch);
            rec.epoch = state.epoch;
            rec.eps_loss = loss.eps_loss;
            rec.fidelity_loss = loss.fidelity_loss;
            if (cfg.eval_every > 0 && state.epoch % cfg.eval_every == 0) {
                const bool with_full = cfg.full_eval_every > 0 && (state.epoch / cfg.eval_every) % cfg.full_eval_every == 0;
                auto [sc, full] = evaluate_model(state.net, data, cfg, sch, state.epoch, with_full);
                rec.shortcut_metrics = sc;
                rec.full_metrics = full;
            }
        } catch (const NumericError&) {
            state = std::move(last_good);
            throw;
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.records.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(state, rec);
    }
    return log;
}

} // namespace sdm
