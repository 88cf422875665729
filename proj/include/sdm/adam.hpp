#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "sdm/error.hpp"
#include "sdm/types.hpp"

namespace sdm {

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    ParamVector m;
    ParamVector v;

    AdamState() = default;
    AdamState(Eigen::Index n, double learning_rate)
        : lr(learning_rate), m(ParamVector::Zero(n)), v(ParamVector::Zero(n)) {}
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(ParamVector& params, const ParamVector& grads, AdamState& opt) {
    if (grads.size() != params.size() || opt.m.size() != params.size() || opt.v.size() != params.size())
        throw ArgumentError("adam_step: gradient/moment sizes do not match the parameters");
    if (!grads.allFinite()) throw NumericError("adam_step: non-finite gradient");

    ++opt.step;
    const double t = static_cast<double>(opt.step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grads;
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grads.cwiseAbs2();
    params.array() -= opt.lr * (opt.m.array() / c1) / ((opt.v.array() / c2).sqrt() + opt.eps);
}

/// Applies a recorded sequence of gradients in order.
inline void adam_replay(ParamVector& params, std::span<const ParamVector> grads, AdamState& opt) {
    for (const auto& g : grads) adam_step(params, g, opt);
}

} // namespace sdm
