#include "csc/csc_layer.hpp"

#include <cmath>

#include "csc/rng.hpp"

namespace csc {

ConvDictionary::ConvDictionary(autodiff::ParamPtr kernel, ConvGeometry geom)
    : kernel_(std::move(kernel)), geom_(geom) {
    geom_.validate();
    const Tensor& k = kernel_->value;
    if (k.rank() != 4 || k.dim(0) != geom_.out_channels || k.dim(1) != geom_.in_channels ||
        k.dim(2) != geom_.kernel_size || k.dim(3) != geom_.kernel_size) {
        throw DimensionError("dictionary kernel shape " + shape_to_string(k.shape()) +
                             " does not match geometry");
    }
    kernel_->value.ensure_finite("dictionary kernel");
}

real_t ConvDictionary::lipschitz(std::int64_t code_h, std::int64_t code_w,
                                 int power_iters) const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    const auto key = std::make_pair(code_h, code_w);
    auto it = lipschitz_cache_.find(key);
    if (it != lipschitz_cache_.end()) return it->second;

    // Power iteration on z -> conv2d(deconv2d(z)). The start vector comes
    // from a fixed seed so the estimate depends only on the kernel.
    Rng rng(0x5ca1ab1eull);
    Tensor v = rng.normal_tensor({1, geom_.out_channels, code_h, code_w});
    real_t lambda = 0;
    for (int i = 0; i < power_iters; ++i) {
        Tensor w = conv2d(deconv2d(v, kernel_->value, geom_), kernel_->value, geom_);
        const real_t n2 = squared_norm(w);
        if (n2 <= 0) {
            lambda = 0;
            break;
        }
        lambda = dot(v, w) / squared_norm(v);
        v = scale(w, real_t(1) / std::sqrt(n2));
    }
    if (lambda <= 0) lambda = 1;  // all-zero kernel: any step is valid
    lipschitz_cache_[key] = lambda;
    return lambda;
}

void ConvDictionary::invalidate_lipschitz() {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    lipschitz_cache_.clear();
}

void ConvDictionary::set_cached_lipschitz(std::int64_t code_h, std::int64_t code_w,
                                          real_t value) {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    lipschitz_cache_[{code_h, code_w}] = value;
}

std::map<std::pair<std::int64_t, std::int64_t>, real_t> ConvDictionary::cached_lipschitz()
    const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    return lipschitz_cache_;
}

void FistaConfig::validate() const {
    if (lambda < 0) throw DimensionError("fista: lambda must be nonnegative");
    if (iterations < 1) throw DimensionError("fista: iterations must be >= 1");
    if (step_size < 0) throw DimensionError("fista: step_size must be positive or 0 (auto)");
    if (power_iters < 1) throw DimensionError("fista: power_iters must be >= 1");
}

autodiff::NodeId fista_encode_node(autodiff::Graph& g, autodiff::NodeId x,
                                   const ConvDictionary& dict, const FistaConfig& cfg,
                                   const EncodeOptions& opts) {
    cfg.validate();
    const ConvGeometry& geom = dict.geometry();
    // Copy: node storage reallocates as the unroll is recorded.
    const Tensor xv = g.value(x);
    if (xv.rank() != 4 || xv.dim(1) != geom.in_channels) {
        throw DimensionError("fista_encode: input shape " + shape_to_string(xv.shape()) +
                             " does not match dictionary geometry");
    }
    xv.ensure_finite("fista_encode input");

    const real_t lambda = opts.lambda_override >= 0 ? opts.lambda_override : cfg.lambda;
    const int iterations =
        opts.iterations_override > 0 ? opts.iterations_override : cfg.iterations;
    const std::int64_t n = xv.dim(0);
    const std::int64_t code_h = geom.conv_output_size(xv.dim(2));
    const std::int64_t code_w = geom.conv_output_size(xv.dim(3));
    if (code_h < 1 || code_w < 1) throw DimensionError("fista_encode: empty code grid");
    if (geom.deconv_output_size(code_h) != xv.dim(2) ||
        geom.deconv_output_size(code_w) != xv.dim(3)) {
        throw DimensionError("fista_encode: geometry does not tile the input exactly (" +
                             shape_to_string(xv.shape()) + ")");
    }

    real_t lipschitz;
    real_t step;
    if (cfg.step_size > 0) {
        step = cfg.step_size;
        lipschitz = real_t(1) / step;
    } else {
        lipschitz = cfg.lipschitz_margin * dict.lipschitz(code_h, code_w, cfg.power_iters);
        step = real_t(1) / lipschitz;
    }
    if (opts.trace) {
        opts.trace->objective.clear();
        opts.trace->step_size = step;
        opts.trace->lipschitz = lipschitz;
    }

    autodiff::NodeId kernel = g.parameter(dict.kernel());
    if (opts.detach_params) kernel = g.stop_gradient(kernel);

    const real_t f0 =
        std::max(real_t(0.5) * squared_norm(xv), real_t(1e-12));  // F(z_0) with z_0 = 0

    // State: z (current iterate), z_prev, plus their synthesized images so
    // the extrapolated point's synthesis is a linear combination instead of
    // an extra deconvolution.
    autodiff::NodeId z = g.constant(Tensor::zeros({n, geom.out_channels, code_h, code_w}));
    autodiff::NodeId az = g.constant(Tensor::zeros(xv.shape()));
    autodiff::NodeId z_prev = z;
    autodiff::NodeId az_prev = az;
    real_t t = 1;

    for (int it = 0; it < iterations; ++it) {
        autodiff::NodeId y, ay;
        if (it == 0) {
            y = z;
            ay = az;
        } else {
            const real_t t_next = (1 + std::sqrt(1 + 4 * t * t)) / 2;
            const real_t c = cfg.nesterov ? (t - 1) / t_next : real_t(0);
            t = t_next;
            if (c != 0) {
                y = g.add(g.scale(z, 1 + c), g.scale(z_prev, -c));
                ay = g.add(g.scale(az, 1 + c), g.scale(az_prev, -c));
            } else {
                y = z;
                ay = az;
            }
        }
        autodiff::NodeId residual = g.sub(ay, x);
        autodiff::NodeId grad = g.conv2d(residual, kernel, geom);
        autodiff::NodeId z_next =
            g.soft_threshold(g.sub(y, g.scale(grad, step)), step * lambda);
        autodiff::NodeId az_next = g.deconv2d(z_next, kernel, geom);

        const real_t objective = lambda * l1_norm(g.value(z_next)) +
                                 real_t(0.5) * squared_norm(sub(g.value(az_next), xv));
        if (!std::isfinite(objective) || objective > cfg.divergence_factor * f0) {
            throw NumericError("fista_encode: diverged at iteration " + std::to_string(it + 1) +
                               " (objective " + std::to_string(objective) + ")");
        }
        if (opts.trace) opts.trace->objective.push_back(objective);

        z_prev = z;
        az_prev = az;
        z = z_next;
        az = az_next;
        (void)kv;
    }
    return z;
}

Tensor fista_encode(const Tensor& x, const ConvDictionary& dict, const FistaConfig& cfg,
                    FistaTrace* trace, real_t lambda_override) {
    autodiff::Graph g;
    EncodeOptions opts;
    opts.trace = trace;
    opts.lambda_override = lambda_override;
    autodiff::NodeId z = fista_encode_node(g, g.constant(x), dict, cfg, opts);
    return g.value(z);
}

autodiff::NodeId decode_node(autodiff::Graph& g, autodiff::NodeId z, const ConvDictionary& dict,
                             bool detach_params) {
    autodiff::NodeId kernel = g.parameter(dict.kernel());
    if (detach_params) kernel = g.stop_gradient(kernel);
    return g.deconv2d(z, kernel, dict.geometry());
}

Tensor decode(const Tensor& z, const ConvDictionary& dict) {
    return deconv2d(z, dict.kernel()->value, dict.geometry());
}

real_t kkt_residual(const Tensor& x, const Tensor& z, const ConvDictionary& dict,
                    real_t lambda) {
    const Tensor synth = deconv2d(z, dict.kernel()->value, dict.geometry());
    const Tensor grad = conv2d(sub(synth, x), dict.kernel()->value, dict.geometry());
    real_t worst = 0;
    for (std::int64_t i = 0; i < z.size(); ++i) {
        real_t r;
        if (z[i] != 0) {
            r = std::abs(grad[i] + (z[i] > 0 ? lambda : -lambda));
        } else {
            r = std::max<real_t>(std::abs(grad[i]) - lambda, 0);
        }
        worst = std::max(worst, r);
    }
    return worst;
}

real_t fista_objective(const Tensor& x, const Tensor& z, const ConvDictionary& dict,
                       real_t lambda) {
    const Tensor synth = deconv2d(z, dict.kernel()->value, dict.geometry());
    return lambda * l1_norm(z) + real_t(0.5) * squared_norm(sub(synth, x));
}

} // namespace csc
