#pragma once

#include <cstdint>
#include <random>

#include "sdm/types.hpp"

namespace sdm {

/// Independent random streams derived from one run seed. Each consumer asks
/// for its own stream so that adding draws in one place never shifts another.
enum class Stream : std::uint32_t {
    data = 1,
    init = 2,
    timestep = 3,
    eps_noise = 4,
    chain_steps = 5,
    chain_noise = 6,
    shuffle = 7,
    sample = 8,
    eval = 9,
};

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Stream for (seed, purpose, index); index is typically the epoch.
    static Rng derive(std::uint64_t seed, Stream purpose, std::uint64_t index = 0) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                          static_cast<std::uint32_t>(index >> 32)};
        Rng rng(0);
        rng.engine_.seed(seq);
        return rng;
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal() { return normal_(engine_); }

    /// Uniform integer on the closed range [lo, hi].
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> dist(lo, hi);
        return dist(engine_);
    }

    PointBatch normal_batch(Eigen::Index rows, Eigen::Index cols) {
        PointBatch out(rows, cols);
        // Row-major fill order so a batch of n rows is a prefix of a batch of n+1.
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = normal();
        return out;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace sdm
