#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "sdm/data.hpp"
#include "sdm/eval.hpp"
#include "test_support.hpp"

using namespace sdm;

namespace {

PointBatch pts(std::initializer_list<std::array<double, 2>> xs) {
    PointBatch p(static_cast<Eigen::Index>(xs.size()), 2);
    Eigen::Index i = 0;
    for (const auto& x : xs) {
        p(i, 0) = x[0];
        p(i, 1) = x[1];
        ++i;
    }
    return p;
}

double brute_energy(const PointBatch& a, const PointBatch& b) {
    double ab = 0, aa = 0, bb = 0;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.rows(); ++j) ab += std::hypot(a(i, 0) - b(j, 0), a(i, 1) - b(j, 1));
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.rows(); ++j) aa += std::hypot(a(i, 0) - a(j, 0), a(i, 1) - a(j, 1));
    for (int i = 0; i < b.rows(); ++i)
        for (int j = 0; j < b.rows(); ++j) bb += std::hypot(b(i, 0) - b(j, 0), b(i, 1) - b(j, 1));
    const double na = static_cast<double>(a.rows()), nb = static_cast<double>(b.rows());
    return 2 * ab / (na * nb) - aa / (na * na) - bb / (nb * nb);
}

double brute_chamfer(const PointBatch& a, const PointBatch& b) {
    auto one = [](const PointBatch& x, const PointBatch& y) {
        double total = 0;
        for (int i = 0; i < x.rows(); ++i) {
            double best = INFINITY;
            for (int j = 0; j < y.rows(); ++j) best = std::min(best, std::hypot(x(i, 0) - y(j, 0), x(i, 1) - y(j, 1)));
            total += best;
        }
        return total / static_cast<double>(x.rows());
    };
    return one(a, b) + one(b, a);
}

const NoiseSchedule& schedule() {
    static const NoiseSchedule sch(ScheduleConfig{});
    return sch;
}

} // namespace

TEST(EnergyDistance, BasicValues) {
    Rng rng(1);
    const PointBatch a = rng.normal_batch(40, 2);
    const PointBatch b = rng.normal_batch(55, 2);
    EXPECT_EQ(energy_distance(a, a), 0.0);
    EXPECT_EQ(energy_distance(a, b), energy_distance(b, a));
    EXPECT_EQ(energy_distance(pts({{0, 0}}), pts({{1, 0}})), 2.0);
    EXPECT_THROW(energy_distance(PointBatch(0, 2), a), ArgumentError);
}

TEST(EnergyDistance, MatchesBruteForceAndIsNonNegative) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const PointBatch a = rng.normal_batch(rng.uniform_int(1, 60), 2);
        PointBatch b = rng.normal_batch(rng.uniform_int(1, 60), 2);
        b.col(0).array() += rng.normal();
        const double e = energy_distance(a, b);
        EXPECT_GE(e, 0.0);
        EXPECT_NEAR(e, std::max(0.0, brute_energy(a, b)), 1e-12);
    }
}

TEST(EnergyDistance, PermutationOfTheSameMultisetIsNearZero) {
    Rng rng(3);
    const PointBatch a = rng.normal_batch(100, 2);
    const PointBatch b = a.colwise().reverse();
    EXPECT_LT(energy_distance(a, b), 1e-14);
}

TEST(EnergyDistance, RealVsRealNoiseFloorIsPositive) {
    const auto ps = generate_swirl(2048, 9, 0.01);
    const double floor = energy_distance(PointBatch(ps.points.topRows(1024)), PointBatch(ps.points.bottomRows(1024)));
    EXPECT_GT(floor, 0.0);
    EXPECT_LT(floor, 0.05);
}

TEST(Chamfer, Values) {
    Rng rng(4);
    const PointBatch a = rng.normal_batch(30, 2);
    EXPECT_EQ(chamfer(a, a), 0.0);
    EXPECT_EQ(chamfer(pts({{0, 0}}), pts({{3, 4}})), 10.0);
    for (int trial = 0; trial < 10; ++trial) {
        const PointBatch x = rng.normal_batch(50, 2);
        const PointBatch y = rng.normal_batch(50, 2);
        EXPECT_NEAR(chamfer(x, y), brute_chamfer(x, y), 1e-12);
        EXPECT_EQ(chamfer(x, y), chamfer(y, x));
    }
    EXPECT_THROW(chamfer(a, PointBatch(0, 2)), ArgumentError);
}

TEST(MetricReport, JsonShape) {
    Rng rng(5);
    const auto r = evaluate(rng.normal_batch(10, 2), rng.normal_batch(12, 2), "shortcut-10");
    const auto j = nlohmann::json::parse(to_json_line(r));
    EXPECT_EQ(j["n_gen"], 10);
    EXPECT_EQ(j["n_real"], 12);
    EXPECT_EQ(j["sampler"], "shortcut-10");
    EXPECT_EQ(j["energy_distance"].get<double>(), r.energy_distance);
    EXPECT_EQ(j["chamfer"].get<double>(), r.chamfer);
    EXPECT_FALSE(j.contains("epoch"));
}

TEST(SnapshotGrid, ShortcutEmitsKPlusOneSnapshots) {
    Rng rng(6);
    NetConfig cfg;
    cfg.hidden_dim = 16;
    const auto net = DenoiserNet::initialized(cfg, rng);
    const auto dir = test::temp_dir("snap_shortcut");
    SnapshotPlan plan;
    plan.spec = ChainSpec::evenly_spaced(200, 10);
    const auto snaps = snapshot_grid(net, schedule(), plan, 3, 64, dir);
    ASSERT_EQ(snaps.size(), 11u);
    for (int k = 0; k <= 10; ++k) {
        EXPECT_EQ(snaps[static_cast<std::size_t>(k)].first, k);
        EXPECT_TRUE(std::filesystem::exists(dir / ("snap_shortcut_" + std::to_string(k) + ".csv")));
    }
    EXPECT_TRUE(snaps.back().second == sample_shortcut(net, 64, plan.spec, schedule(), 3));
    const auto again = snapshot_grid(net, schedule(), plan, 3, 64);
    for (std::size_t i = 0; i < snaps.size(); ++i) EXPECT_TRUE(snaps[i].second == again[i].second);
}

TEST(SnapshotGrid, FullRecordsRequestedSteps) {
    Rng rng(7);
    NetConfig cfg;
    cfg.hidden_dim = 16;
    const auto net = DenoiserNet::initialized(cfg, rng);
    const auto dir = test::temp_dir("snap_full");
    SnapshotPlan plan;
    plan.full = true;
    const auto snaps = snapshot_grid(net, schedule(), plan, 4, 32, dir);
    ASSERT_EQ(snaps.size(), 5u);
    const int ks[] = {20, 60, 100, 160, 200};
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(snaps[i].first, ks[i]);
        EXPECT_TRUE(std::filesystem::exists(dir / ("snap_full_" + std::to_string(ks[i]) + ".csv")));
    }
    EXPECT_TRUE(snaps.back().second == sample_full(net, 32, schedule(), 4));
    plan.full_k = {0};
    EXPECT_THROW(snapshot_grid(net, schedule(), plan, 4, 32), ArgumentError);
}
