#pragma once

#include "csc/autodiff.hpp"
#include "csc/tensor.hpp"

namespace csc::rate {

struct RateConfig {
    real_t eps_sq = 0.5;  ///< squared distortion parameter

    void validate() const {
        if (eps_sq <= 0) throw DimensionError("rate: eps_sq must be positive");
    }
};

/// Coding rate of a feature ensemble:
///   R(Z) = 1/2 logdet(I + d/(n*eps^2) Z Z^T)
/// Z is features-by-samples (d x n); this orientation is the API contract.
/// The log-determinant is evaluated by Cholesky on the Gram matrix of the
/// smaller side (the two determinants coincide).
real_t coding_rate(const Tensor& z, const RateConfig& cfg);

/// Rate reduction between two ensembles with equal feature dimension:
///   dR(Z, Zh) = R([Z Zh]) - (R(Z) + R(Zh)) / 2
/// Zero iff the empirical second moments match; symmetric by construction.
real_t rate_reduction(const Tensor& z, const Tensor& zhat, const RateConfig& cfg);

/// Graph-recorded versions used by training, built from differentiable
/// primitives so backward produces exact gradients.
autodiff::NodeId coding_rate_node(autodiff::Graph& g, autodiff::NodeId z,
                                  const RateConfig& cfg);
autodiff::NodeId rate_reduction_node(autodiff::Graph& g, autodiff::NodeId z,
                                     autodiff::NodeId zhat, const RateConfig& cfg);

} // namespace csc::rate
