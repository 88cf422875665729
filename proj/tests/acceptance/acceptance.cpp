// Acceptance gate: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdm/sdm.hpp"

using namespace sdm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

const NoiseSchedule& default_schedule() {
    static const NoiseSchedule sch(ScheduleConfig{});
    return sch;
}

// 1 ---------------------------------------------------------------------------

Outcome schedule_algebra() {
    const auto t0 = Clock::now();
    const auto& sch = default_schedule();
    double worst_power = 0.0, worst_merge = 0.0;
    for (int t = 0; t <= sch.T(); ++t) {
        const double a = sch.alpha(t), s = sch.sigma(t);
        worst_power = std::max(worst_power, std::abs(a * a + s * s - 1.0));
    }
    for (int t = 1; t <= sch.T(); ++t)
        for (int s = 0; s < t; ++s) {
            const double m = sch.transition_coeffs(s, t).alpha_ts * sch.sigma2(s) / sch.sigma(t);
            const double lhs = m * m + sch.posterior_variance(s, t);
            worst_merge = std::max(worst_merge, std::abs(lhs - sch.sigma2(s)) / sch.sigma2(s));
        }
    const double secs = seconds_since(t0);
    return {worst_power <= 1e-12 && worst_merge <= 1e-10 && secs < 1.0,
            fmt("max|a^2+s^2-1|=%.2e (<=1e-12), merged-variance rel=%.2e (<=1e-10), %.3fs", worst_power, worst_merge,
                secs)};
}

// 2 ---------------------------------------------------------------------------

DenoiserNet tiny_net(std::uint64_t seed) {
    NetConfig cfg;
    cfg.hidden_dim = 8;
    Rng rng(seed);
    return DenoiserNet::initialized(cfg, rng);
}

Outcome gradients() {
    const auto t0 = Clock::now();
    const auto& sch = default_schedule();
    const double h = 1e-5;
    double worst_param = 0.0, worst_input = 0.0, worst_chain = 0.0;

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto net = tiny_net(seed);
        Rng rng(seed + 1000);
        PointBatch x = rng.normal_batch(4, 2);
        const PointBatch up = rng.normal_batch(4, 2);
        std::vector<int> t(4);
        for (auto& v : t) v = rng.uniform_int(0, sch.T());
        const auto scalar = [&](const DenoiserNet& n, const PointBatch& in) {
            return (n.forward(in, t, sch).first.array() * up.array()).sum();
        };
        const auto [out, tape] = net.forward(x, t, sch);
        const auto g = net.backward(tape, up);
        for (Eigen::Index i = 0; i < net.param_count(); ++i) {
            const double keep = net.params()(i);
            net.params()(i) = keep + h;
            const double a = scalar(net, x);
            net.params()(i) = keep - h;
            const double b = scalar(net, x);
            net.params()(i) = keep;
            worst_param = std::max(worst_param, rel_err(g.params(i), (a - b) / (2 * h)));
        }
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double keep = x(i);
            x(i) = keep + h;
            const double a = scalar(net, x);
            x(i) = keep - h;
            const double b = scalar(net, x);
            x(i) = keep;
            worst_input = std::max(worst_input, rel_err(g.inputs(i), (a - b) / (2 * h)));
        }

        const ChainSpec spec{{120, 60, 20}};
        const PointBatch x0 = rng.normal_batch(4, 2);
        const PointBatch x_init = forward_noise(x0, spec.steps[0], rng.normal_batch(4, 2), sch);
        const std::vector<PointBatch> noises{rng.normal_batch(4, 2), rng.normal_batch(4, 2)};
        const auto loss = [&](const DenoiserNet& n) {
            return fidelity_loss(x0, run_chain(n, x_init, spec, noises, sch).output());
        };
        const auto chain = run_chain(net, x_init, spec, noises, sch);
        const ParamVector cg = chain_backward(net, chain, fidelity_grad(x0, chain.output()), sch, ChainGrad::full);
        for (Eigen::Index i = 0; i < net.param_count(); ++i) {
            const double keep = net.params()(i);
            net.params()(i) = keep + h;
            const double a = loss(net);
            net.params()(i) = keep - h;
            const double b = loss(net);
            net.params()(i) = keep;
            worst_chain = std::max(worst_chain, rel_err(cg(i), (a - b) / (2 * h)));
        }
    }
    const double secs = seconds_since(t0);
    return {worst_param <= 1e-4 && worst_input <= 1e-4 && worst_chain <= 1e-4 && secs < 10.0,
            fmt("rel err params=%.2e inputs=%.2e chain(K=3)=%.2e (<=1e-4), %.2fs", worst_param, worst_input,
                worst_chain, secs)};
}

// 3 ---------------------------------------------------------------------------

Outcome posterior_equivalence() {
    const auto t0 = Clock::now();
    const auto& sch = default_schedule();
    Rng rng(3);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const int t = rng.uniform_int(1, sch.T());
        const int s = rng.uniform_int(0, t - 1);
        const PointBatch x0 = rng.normal_batch(1, 2);
        const PointBatch eps = rng.normal_batch(1, 2);
        const PointBatch xt = sch.alpha(t) * x0 + sch.sigma(t) * eps;
        const PointBatch direct = posterior_mean(sch, xt, x0, s, t);
        const double a_ts = sch.alpha(t) / sch.alpha(s);
        const PointBatch expanded = sch.alpha(s) * x0 + (a_ts * sch.sigma2(s) / sch.sigma(t)) * eps;
        worst = std::max(worst, (direct - expanded).norm() / expanded.norm());
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-10 && secs < 1.0, fmt("max rel diff=%.2e over 1000 instances (<=1e-10), %.3fs", worst, secs)};
}

// 4 ---------------------------------------------------------------------------

Outcome marginal_consistency() {
    const auto t0 = Clock::now();
    const auto& sch = default_schedule();
    const Eigen::Index n = 100000;
    Rng rng(4);
    double worst_z = 0.0;
    for (int pair = 0; pair < 10; ++pair) {
        const int t = rng.uniform_int(1, sch.T());
        const int s = rng.uniform_int(0, t - 1);
        PointBatch x0(n, 2);
        x0.col(0).setConstant(rng.normal());
        x0.col(1).setConstant(rng.normal());
        const OracleDenoiser oracle(x0);
        const PointBatch xt = forward_noise(x0, t, rng.normal_batch(n, 2), sch);
        const PointBatch xs = ancestral_step(oracle, xt, s, t, rng.normal_batch(n, 2), sch);
        const double sd = sch.sigma(s);
        for (int c = 0; c < 2; ++c) {
            const double mean = xs.col(c).mean();
            const double var = (xs.col(c).array() - mean).square().sum() / (n - 1.0);
            const double z_mean = std::abs(mean - sch.alpha(s) * x0(0, c)) / (sd / std::sqrt(double(n)));
            const double z_var = std::abs(var - sd * sd) / (sd * sd * std::sqrt(2.0 / (n - 1.0)));
            worst_z = std::max({worst_z, z_mean, z_var});
        }
    }
    const double secs = seconds_since(t0);
    return {worst_z <= 3.0 && secs < 30.0,
            fmt("worst |z| of mean/variance over 10 (s,t) pairs = %.2f (<=3), %.1fs", worst_z, secs)};
}

// 5 / 6 -----------------------------------------------------------------------

struct Reproduction {
    double floor = 0.0;
    double shortcut_k10 = 0.0, shortcut_full = 0.0;
    double baseline_k10 = 0.0, baseline_full = 0.0;
    double shortcut_secs = 0.0, baseline_secs = 0.0;
    DenoiserNet shortcut_net{NetConfig{}};
};

Reproduction reproduce() {
    Reproduction r;
    const auto& sch = default_schedule();
    const PointSet pool = generate_swirl(2048, 11, 0.01);
    const PointBatch train = pool.points.topRows(1024);
    const PointBatch held_out = pool.points.bottomRows(1024);
    const PointSet floor_set = generate_swirl(2048, 12, 0.01);
    r.floor = energy_distance(PointBatch(floor_set.points.topRows(1024)), PointBatch(floor_set.points.bottomRows(1024)));

    const auto train_and_score = [&](TrainMode mode, double& k10, double& full, double& secs) {
        TrainConfig cfg;
        cfg.mode = mode;
        const auto t0 = Clock::now();
        TrainState state = TrainState::fresh(NetConfig{}, cfg);
        fit(state, train, cfg, sch);
        secs = seconds_since(t0);
        k10 = energy_distance(sample_shortcut(state.net, 1024, ChainSpec::evenly_spaced(cfg.T, cfg.K), sch, 99),
                              held_out);
        full = energy_distance(sample_full(state.net, 1024, sch, 99), held_out);
        return state.net;
    };
    r.shortcut_net = train_and_score(TrainMode::shortcut, r.shortcut_k10, r.shortcut_full, r.shortcut_secs);
    train_and_score(TrainMode::baseline, r.baseline_k10, r.baseline_full, r.baseline_secs);
    return r;
}

Outcome reproduction_quality(const Reproduction& r) {
    const double gate = 3.0 * r.floor;
    return {r.shortcut_k10 <= gate && r.shortcut_secs <= 600.0,
            fmt("shortcut K=10 energy distance=%.4g vs 3x floor=%.4g (floor %.4g), training %.0fs", r.shortcut_k10,
                gate, r.floor, r.shortcut_secs)};
}

Outcome baseline_comparison(const Reproduction& r) {
    const bool k10 = r.shortcut_k10 <= r.baseline_k10;
    const bool full = r.shortcut_full <= 1.25 * r.baseline_full;
    return {k10 && full && r.shortcut_secs + r.baseline_secs <= 1200.0,
            fmt("K=10: shortcut %.4g vs baseline %.4g; full: shortcut %.4g vs 1.25x baseline %.4g", r.shortcut_k10,
                r.baseline_k10, r.shortcut_full, 1.25 * r.baseline_full)};
}

// 7 ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// Drops the trailing wall-clock column of every row.
std::string without_last_column(const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
    return out;
}

int shell(const std::string& cmd) { return std::system(cmd.c_str()); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

bool end_to_end(const std::string& tool, const fs::path& dir, std::string& why) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string log = " >> " + q(dir / "log.txt") + " 2>&1";
    const std::vector<std::string> cmds{
        q(tool) + " gen-data --n 1024 --seed 7 --out " + q(dir / "data.csv"),
        q(tool) + " train --data " + q(dir / "data.csv") + " --epochs 50 --seed 3 --eval-every 25 --eval-samples 256" +
            " --checkpoint-every 25 --out " + q(dir / "run"),
        q(tool) + " sample --checkpoint " + q(dir / "run" / "checkpoint.sdmc") + " --steps 10 --seed 5 --out " +
            q(dir / "samples.csv") + " --snapshots " + q(dir / "snaps"),
        q(tool) + " eval --gen " + q(dir / "samples.csv") + " --real " + q(dir / "data.csv") + " --out " +
            q(dir / "report.json")};
    for (const auto& c : cmds)
        if (shell(c + log) != 0) {
            why = "command failed: " + c;
            return false;
        }
    return true;
}

Outcome determinism(const std::string& tool, const fs::path& work) {
    const auto t0 = Clock::now();
    std::string why;
    const fs::path a = work / "run_a", b = work / "run_b";
    if (!end_to_end(tool, a, why) || !end_to_end(tool, b, why)) return {false, why};
    int files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file() || entry.path().filename() == "log.txt") continue;
        const fs::path rel = fs::relative(entry.path(), a);
        std::string x = slurp(entry.path()), y = slurp(b / rel);
        if (rel.filename() == "train_log.csv") {
            x = without_last_column(x);
            y = without_last_column(y);
        }
        if (!fs::exists(b / rel) || x != y) return {false, "differs: " + rel.string()};
        ++files;
    }
    const double secs = seconds_since(t0);
    return {files > 0 && secs < 120.0,
            fmt("%.0f files byte-identical across two runs (train_log.csv compared without its wall-clock seconds "
                "column), %.1fs",
                files, secs)};
}

// 8 ---------------------------------------------------------------------------

Outcome speedup(const DenoiserNet& net) {
    const auto& sch = default_schedule();
    const auto spec = ChainSpec::evenly_spaced(sch.T(), 10);
    const auto median_time = [](const std::function<void()>& f, int reps) {
        std::vector<double> ts;
        for (int i = 0; i < reps; ++i) {
            const auto t0 = Clock::now();
            f();
            ts.push_back(seconds_since(t0));
        }
        std::sort(ts.begin(), ts.end());
        return ts[ts.size() / 2];
    };
    volatile double sink = 0.0;
    const double fast = median_time([&] { sink = sink + sample_shortcut(net, 1024, spec, sch, 1).sum(); }, 15);
    const double slow = median_time([&] { sink = sink + sample_full(net, 1024, sch, 1).sum(); }, 5);
    const double ratio = fast / slow;
    return {ratio <= 0.1 * 1.2, fmt("K=10 %.4fs vs full %.4fs, ratio %.4f (<=0.12)", fast, slow, ratio)};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string tool;
    std::string work = "acceptance_work";
    app.add_option("--tool", tool, "path of the sdm executable")->required();
    app.add_option("--work", work, "scratch directory");
    CLI11_PARSE(app, argc, argv);

    int failed = 0;
    const auto report = [&](int id, const char* name, const Outcome& o) {
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << std::endl;
        if (!o.pass) ++failed;
    };

    report(1, "schedule algebra", schedule_algebra());
    report(2, "gradient correctness", gradients());
    report(3, "posterior equivalence", posterior_equivalence());
    report(4, "marginal consistency", marginal_consistency());
    const Reproduction r = reproduce();
    report(5, "swirl reproduction (K=10)", reproduction_quality(r));
    report(6, "baseline comparison", baseline_comparison(r));
    report(7, "end-to-end determinism", determinism(tool, fs::path(work)));
    report(8, "few-step speedup", speedup(r.shortcut_net));

    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
