#include "csc/rate.hpp"

namespace csc::rate {

using autodiff::Graph;
using autodiff::NodeId;

NodeId coding_rate_node(Graph& g, NodeId z, const RateConfig& cfg) {
    cfg.validate();
    const Tensor& zv = g.value(z);
    if (zv.rank() != 2) {
        throw DimensionError("coding_rate: expected features-by-samples matrix, got " +
                             shape_to_string(zv.shape()));
    }
    zv.ensure_finite("coding_rate input");
    const std::int64_t d = zv.dim(0);
    const std::int64_t n = zv.dim(1);
    const real_t c = static_cast<real_t>(d) / (static_cast<real_t>(n) * cfg.eps_sq);

    // det(I_d + c Z Z^T) == det(I_n + c Z^T Z); factor the smaller Gram.
    NodeId gram;
    if (d <= n) {
        gram = g.matmul(z, g.transpose2d(z));
    } else {
        gram = g.matmul(g.transpose2d(z), z);
    }
    return g.scale(g.logdet_spd(g.add_scaled_identity(gram, c)), real_t(0.5));
}

NodeId rate_reduction_node(Graph& g, NodeId z, NodeId zhat, const RateConfig& cfg) {
    const Tensor& a = g.value(z);
    const Tensor& b = g.value(zhat);
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw DimensionError("rate_reduction: feature dimensions differ (" +
                             shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()) +
                             ")");
    }
    NodeId r_union = coding_rate_node(g, g.concat_cols(z, zhat), cfg);
    NodeId r_z = coding_rate_node(g, z, cfg);
    NodeId r_zhat = coding_rate_node(g, zhat, cfg);
    return g.sub(r_union, g.scale(g.add(r_z, r_zhat), real_t(0.5)));
}

real_t coding_rate(const Tensor& z, const RateConfig& cfg) {
    Graph g;
    return g.value(coding_rate_node(g, g.constant(z), cfg))[0];
}

real_t rate_reduction(const Tensor& z, const Tensor& zhat, const RateConfig& cfg) {
    Graph g;
    return g.value(rate_reduction_node(g, g.constant(z), g.constant(zhat), cfg))[0];
}

} // namespace csc::rate
