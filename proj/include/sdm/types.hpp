#pragma once

#include <Eigen/Core>

namespace sdm {

/// N points stored row-wise (N x dim). Used for data, latents and noise alike.
using PointBatch = Eigen::MatrixXd;

/// Flat parameter (or gradient) vector of a network.
using ParamVector = Eigen::VectorXd;

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    return m.allFinite();
}

} // namespace sdm
