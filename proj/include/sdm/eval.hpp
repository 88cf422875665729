#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sdm/data.hpp"
#include "sdm/diffusion.hpp"
#include "sdm/error.hpp"
#include "sdm/types.hpp"

namespace sdm {

namespace detail {

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double v) {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double dist(const PointBatch& a, Eigen::Index i, const PointBatch& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).norm();
}

inline double mean_cross_distance(const PointBatch& a, const PointBatch& b) {
    CompensatedSum s;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) s.add(dist(a, i, b, j));
    return s.value() / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

inline double mean_within_distance(const PointBatch& a) {
    // Off-diagonal pairs counted twice, diagonal contributes zero.
    CompensatedSum s;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = i + 1; j < a.rows(); ++j) s.add(dist(a, i, a, j));
    const auto n = static_cast<double>(a.rows());
    return 2.0 * s.value() / (n * n);
}

/// Strict weak order on batches used to evaluate symmetric metrics in one
/// canonical argument order.
inline bool canonical_less(const PointBatch& a, const PointBatch& b) {
    if (a.rows() != b.rows()) return a.rows() < b.rows();
    if (a.cols() != b.cols()) return a.cols() < b.cols();
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

inline void require_nonempty(const PointBatch& a, const PointBatch& b, const char* what) {
    if (a.rows() == 0 || b.rows() == 0) throw ArgumentError(std::string(what) + ": empty point set");
    if (a.cols() != b.cols()) throw ArgumentError(std::string(what) + ": dimension mismatch");
}

} // namespace detail

/// E(A, B) = 2 E|a - b| - E|a - a'| - E|b - b'| over all pairs (V-statistic).
inline double energy_distance(const PointBatch& a, const PointBatch& b) {
    detail::require_nonempty(a, b, "energy_distance");
    if (a.rows() == b.rows() && a == b) return 0.0;
    const bool swap = detail::canonical_less(b, a);
    const PointBatch& x = swap ? b : a;
    const PointBatch& y = swap ? a : b;
    const double cross = detail::mean_cross_distance(x, y);
    // The V-statistic is non-negative; clamp rounding noise on near-identical sets.
    return std::max(0.0, 2.0 * cross - detail::mean_within_distance(x) - detail::mean_within_distance(y));
}

inline double energy_distance(const PointSet& a, const PointSet& b) { return energy_distance(a.points, b.points); }

/// Mean nearest-neighbour distance A -> B plus B -> A.
inline double chamfer(const PointBatch& a, const PointBatch& b) {
    detail::require_nonempty(a, b, "chamfer");
    const auto one_way = [](const PointBatch& from, const PointBatch& to) {
        detail::CompensatedSum s;
        for (Eigen::Index i = 0; i < from.rows(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < to.rows(); ++j) best = std::min(best, (from.row(i) - to.row(j)).squaredNorm());
            s.add(std::sqrt(best));
        }
        return s.value() / static_cast<double>(from.rows());
    };
    const bool swap = detail::canonical_less(b, a);
    const PointBatch& x = swap ? b : a;
    const PointBatch& y = swap ? a : b;
    return one_way(x, y) + one_way(y, x);
}

inline double chamfer(const PointSet& a, const PointSet& b) { return chamfer(a.points, b.points); }

struct MetricReport {
    double energy_distance = 0.0;
    double chamfer = 0.0;
    Eigen::Index n_gen = 0;
    Eigen::Index n_real = 0;
    std::string sampler; ///< "full", "shortcut-<K>" or "external"
    std::optional<int> epoch;

    friend void to_json(nlohmann::ordered_json& j, const MetricReport& r) {
        j = nlohmann::ordered_json{{"energy_distance", r.energy_distance},
                                   {"chamfer", r.chamfer},
                                   {"n_gen", r.n_gen},
                                   {"n_real", r.n_real},
                                   {"sampler", r.sampler}};
        if (r.epoch) j["epoch"] = *r.epoch;
    }
};

inline MetricReport evaluate(const PointBatch& generated, const PointBatch& real, std::string sampler) {
    MetricReport r;
    r.energy_distance = energy_distance(generated, real);
    r.chamfer = chamfer(generated, real);
    r.n_gen = generated.rows();
    r.n_real = real.rows();
    r.sampler = std::move(sampler);
    return r;
}

inline std::string to_json_line(const MetricReport& r) {
    nlohmann::ordered_json j = r;
    return j.dump();
}

/// Which sampler snapshot_grid runs and where it stops to record.
struct SnapshotPlan {
    bool full = false;
    ChainSpec spec;                      ///< shortcut chain (used when !full)
    std::vector<int> full_k{20, 60, 100, 160, 200}; ///< reverse steps completed (used when full)
};

/// Runs a sampler and records intermediate batches. Entries are keyed by k,
/// the number of network evaluations completed: for the shortcut sampler k =
/// 0..K-1 are the chain states and k = K is the final prediction; for the
/// full sampler k counts ancestral steps. When `out_dir` is non-empty each
/// entry is also written as snap_<sampler>_<k>.csv.
template <Denoiser D>
std::vector<std::pair<int, PointBatch>> snapshot_grid(const D& d, const NoiseSchedule& sch, const SnapshotPlan& plan,
                                                      std::uint64_t seed, Eigen::Index n,
                                                      const std::filesystem::path& out_dir = {}) {
    std::vector<std::pair<int, PointBatch>> snaps;
    std::string sampler;
    if (plan.full) {
        for (int k : plan.full_k)
            if (k < 1 || k > sch.T()) throw ArgumentError("snapshot k=" + std::to_string(k) + " outside [1, T]");
        sampler = "full";
        sample_full(d, n, sch, seed, 2, [&](int k, const PointBatch& x) {
            if (std::find(plan.full_k.begin(), plan.full_k.end(), k) != plan.full_k.end()) snaps.emplace_back(k, x);
        });
    } else {
        sampler = "shortcut";
        const ChainState chain = sample_shortcut_chain(d, n, plan.spec, sch, seed);
        for (std::size_t k = 0; k < chain.states.size(); ++k) snaps.emplace_back(static_cast<int>(k), chain.states[k]);
        snaps.emplace_back(plan.spec.K(), chain.output());
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        for (const auto& [k, x] : snaps)
            write_points_csv(x, (out_dir / ("snap_" + sampler + "_" + std::to_string(k) + ".csv")).string());
    }
    return snaps;
}

} // namespace sdm
