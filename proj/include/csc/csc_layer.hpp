#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "csc/autodiff.hpp"
#include "csc/tensor.hpp"

namespace csc {

/// One convolution dictionary, shared by an encoder layer and its mirrored
/// decoder layer. The kernel is registered exactly once as a trainable
/// parameter; both layers reference this object.
///
/// Kernel layout is [code_channels, signal_channels, k, k]: conv2d with it
/// maps signal -> code and deconv2d maps code -> signal.
class ConvDictionary {
public:
    ConvDictionary(autodiff::ParamPtr kernel, ConvGeometry geom);

    const autodiff::ParamPtr& kernel() const { return kernel_; }
    const ConvGeometry& geometry() const { return geom_; }

    /// Largest eigenvalue of the synthesis-analysis composition
    /// conv2d(deconv2d(.)) for codes of the given spatial size, estimated by
    /// power iteration. Cached per spatial size until invalidate().
    real_t lipschitz(std::int64_t code_h, std::int64_t code_w, int power_iters) const;
    void invalidate_lipschitz();

    /// Restores a cached estimate (used when resuming from a checkpoint so
    /// the step sizes match the uninterrupted run exactly).
    void set_cached_lipschitz(std::int64_t code_h, std::int64_t code_w, real_t value);
    std::map<std::pair<std::int64_t, std::int64_t>, real_t> cached_lipschitz() const;

private:
    autodiff::ParamPtr kernel_;
    ConvGeometry geom_;
    mutable std::mutex cache_mutex_;
    mutable std::map<std::pair<std::int64_t, std::int64_t>, real_t> lipschitz_cache_;
};

/// Settings of the unrolled l1 solver behind one encoder layer.
struct FistaConfig {
    real_t lambda = 0.01;   ///< sparsity weight
    int iterations = 2;     ///< unroll depth
    real_t step_size = 0;   ///< 0 selects 1/L with L from power iteration
    int power_iters = 50;
    /// Safety factor on the estimated Lipschitz constant so step*L <= 1.
    real_t lipschitz_margin = 1.02;
    bool nesterov = true;   ///< false degrades to plain ISTA (test aid)
    /// Abort when the composite objective exceeds this multiple of its
    /// initial value.
    real_t divergence_factor = 1e3;

    void validate() const;
};

/// Per-solve record: objective after every iteration plus the step size and
/// Lipschitz value actually used.
struct FistaTrace {
    std::vector<real_t> objective;  ///< objective[k] = F(z_{k+1})
    real_t step_size = 0;
    real_t lipschitz = 0;
};

struct EncodeOptions {
    /// Blocks gradient flow from this layer's uses into the dictionary
    /// kernel (input gradients still flow).
    bool detach_params = false;
    /// Overrides FistaConfig::lambda when >= 0; inference-time knob.
    real_t lambda_override = -1;
    /// Overrides FistaConfig::iterations when > 0.
    int iterations_override = 0;
    FistaTrace* trace = nullptr;
};

/// Unrolled FISTA solve of
///   min_z lambda*||z||_1 + 1/2 ||x - deconv2d(z, A)||^2
/// from z_0 = 0, recorded on the graph so gradients flow through every
/// iteration into both x and the dictionary kernel.
autodiff::NodeId fista_encode_node(autodiff::Graph& g, autodiff::NodeId x,
                                   const ConvDictionary& dict, const FistaConfig& cfg,
                                   const EncodeOptions& opts = {});

/// Plain-tensor convenience wrapper over fista_encode_node.
Tensor fista_encode(const Tensor& x, const ConvDictionary& dict, const FistaConfig& cfg,
                    FistaTrace* trace = nullptr, real_t lambda_override = -1);

/// Synthesis map: deconv2d(z, A) with the layer geometry.
autodiff::NodeId decode_node(autodiff::Graph& g, autodiff::NodeId z, const ConvDictionary& dict,
                             bool detach_params = false);
Tensor decode(const Tensor& z, const ConvDictionary& dict);

/// Max-norm distance of the smooth-part gradient from the l1 subdifferential;
/// zero exactly at a solution of the layer program.
real_t kkt_residual(const Tensor& x, const Tensor& z, const ConvDictionary& dict, real_t lambda);

/// Composite objective lambda*||z||_1 + 1/2||x - deconv2d(z,A)||^2.
real_t fista_objective(const Tensor& x, const Tensor& z, const ConvDictionary& dict,
                       real_t lambda);

} // namespace csc
