#include "csc/networks.hpp"

#include <cmath>

#include "csc/rng.hpp"

namespace csc::net {

const char* to_string(Norm n) { return n == Norm::Batch ? "bn" : "none"; }

const char* to_string(Act a) {
    switch (a) {
        case Act::ReLU: return "relu";
        case Act::LReLU: return "lrelu";
        case Act::Tanh: return "tanh";
        default: return "none";
    }
}

Norm norm_from_string(const std::string& s) {
    if (s == "bn") return Norm::Batch;
    if (s == "none") return Norm::None;
    throw ConfigError("unknown norm '" + s + "' (expected bn|none)");
}

Act act_from_string(const std::string& s) {
    if (s == "relu") return Act::ReLU;
    if (s == "lrelu") return Act::LReLU;
    if (s == "tanh") return Act::Tanh;
    if (s == "none") return Act::None;
    throw ConfigError("unknown activation '" + s + "' (expected relu|lrelu|tanh|none)");
}

ArchitectureSpec ArchitectureSpec::preset(const std::string& name) {
    ArchitectureSpec s;
    s.name = name;
    if (name == "cifar") {
        s.in_channels = 3;
        s.input_size = 32;
        s.layers = {
            {64, 4, 2, 1, Norm::None, Act::LReLU, Norm::None, Act::Tanh},
            {128, 4, 2, 1, Norm::Batch, Act::LReLU, Norm::Batch, Act::ReLU},
            {256, 4, 2, 1, Norm::Batch, Act::LReLU, Norm::Batch, Act::ReLU},
            {512, 4, 1, 0, Norm::None, Act::None, Norm::Batch, Act::ReLU},
        };
    } else if (name == "stl") {
        s.in_channels = 3;
        s.input_size = 64;
        // The fourth stage uses padding 1 so the stack closes at 1x1 from a
        // 64x64 input (a zero-padding stage there leaves no valid output for
        // the final 4x4 kernel).
        s.layers = {
            {64, 4, 2, 1, Norm::None, Act::LReLU, Norm::None, Act::Tanh},
            {128, 4, 2, 1, Norm::Batch, Act::LReLU, Norm::Batch, Act::ReLU},
            {256, 4, 2, 1, Norm::Batch, Act::LReLU, Norm::Batch, Act::ReLU},
            {512, 4, 2, 1, Norm::None, Act::None, Norm::Batch, Act::ReLU},
            {1024, 4, 1, 0, Norm::None, Act::None, Norm::Batch, Act::ReLU},
        };
    } else if (name == "toy") {
        s.in_channels = 3;
        s.input_size = 16;
        s.layers = {
            {32, 4, 2, 1, Norm::None, Act::LReLU, Norm::None, Act::Tanh},
            {64, 4, 2, 1, Norm::Batch, Act::LReLU, Norm::Batch, Act::ReLU},
            {128, 4, 1, 0, Norm::None, Act::None, Norm::Batch, Act::ReLU},
        };
    } else {
        throw ConfigError("unknown architecture preset '" + name + "'");
    }
    return s;
}

std::int64_t ArchitectureSpec::latent_dim() const {
    if (layers.empty()) throw ConfigError("architecture has no layers");
    return layers.back().out_channels;
}

std::vector<std::int64_t> ArchitectureSpec::spatial_trace() const {
    std::vector<std::int64_t> trace;
    std::int64_t extent = input_size;
    for (const auto& l : layers) {
        ConvGeometry g{l.kernel, l.stride, l.padding, 1, 1};
        extent = g.conv_output_size(extent);
        if (extent < 1) {
            throw ConfigError("architecture '" + name + "': layer leaves no spatial extent");
        }
        trace.push_back(extent);
    }
    return trace;
}

std::vector<std::int64_t> ArchitectureSpec::channel_trace() const {
    std::vector<std::int64_t> trace;
    for (const auto& l : layers) trace.push_back(l.out_channels);
    return trace;
}

void ArchitectureSpec::validate() const {
    if (layers.empty()) throw ConfigError("architecture has no layers");
    if (in_channels < 1 || input_size < 1) throw ConfigError("architecture: bad input shape");
    const auto trace = spatial_trace();
    if (trace.back() != 1) {
        throw ConfigError("architecture '" + name + "': final encoder output is " +
                          std::to_string(trace.back()) + "x" + std::to_string(trace.back()) +
                          ", expected 1x1");
    }
}

namespace {

autodiff::ParamPtr make_bn_param(const std::string& name, std::int64_t channels, real_t fill) {
    return std::make_shared<autodiff::Parameter>(name, Tensor::full({channels}, fill));
}

} // namespace

Autoencoder::Autoencoder(ArchitectureSpec spec, FistaConfig fista, std::uint64_t init_seed)
    : spec_(std::move(spec)), fista_(fista) {
    spec_.validate();
    fista_.validate();

    Rng rng = Rng::substream(init_seed, /*tag=*/0xd1c7);
    std::int64_t in_ch = spec_.in_channels;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const LayerDesc& l = spec_.layers[i];
        ConvGeometry geom{l.kernel, l.stride, l.padding, in_ch, l.out_channels};
        // i.i.d. normal entries, then each atom (one code channel's footprint)
        // rescaled to unit Frobenius norm.
        const real_t std0 =
            real_t(1) / std::sqrt(static_cast<real_t>(in_ch * l.kernel * l.kernel));
        Tensor kernel = rng.normal_tensor({l.out_channels, in_ch, l.kernel, l.kernel}, 0, std0);
        const std::int64_t atom = in_ch * l.kernel * l.kernel;
        for (std::int64_t m = 0; m < l.out_channels; ++m) {
            real_t n2 = 0;
            for (std::int64_t j = 0; j < atom; ++j) {
                const real_t v = kernel[m * atom + j];
                n2 += v * v;
            }
            const real_t inv = n2 > 0 ? real_t(1) / std::sqrt(n2) : real_t(1);
            for (std::int64_t j = 0; j < atom; ++j) kernel[m * atom + j] *= inv;
        }
        auto param = std::make_shared<autodiff::Parameter>("dict" + std::to_string(i + 1),
                                                           std::move(kernel));
        dicts_.push_back(std::make_shared<ConvDictionary>(param, geom));

        if (l.enc_norm == Norm::Batch) {
            BnBlock bn;
            bn.gamma = make_bn_param("enc_bn" + std::to_string(i + 1) + ".gamma",
                                     l.out_channels, 1);
            bn.beta = make_bn_param("enc_bn" + std::to_string(i + 1) + ".beta",
                                    l.out_channels, 0);
            bn.stats = BnRunning::make(l.out_channels);
            enc_bn_.push_back(std::move(bn));
        } else {
            enc_bn_.push_back(std::nullopt);
        }
        if (l.dec_norm == Norm::Batch) {
            BnBlock bn;
            bn.gamma =
                make_bn_param("dec_bn" + std::to_string(i + 1) + ".gamma", in_ch, 1);
            bn.beta = make_bn_param("dec_bn" + std::to_string(i + 1) + ".beta", in_ch, 0);
            bn.stats = BnRunning::make(in_ch);
            dec_bn_.push_back(std::move(bn));
        } else {
            dec_bn_.push_back(std::nullopt);
        }
        in_ch = l.out_channels;
    }
}

autodiff::NodeId Autoencoder::apply_norm_act(autodiff::Graph& g, autodiff::NodeId h, Norm norm,
                                             Act act, std::optional<BnBlock>& bn,
                                             const ForwardOptions& opts) {
    if (norm == Norm::Batch) {
        autodiff::NodeId gamma = g.parameter(bn->gamma);
        autodiff::NodeId beta = g.parameter(bn->beta);
        if (opts.detach_params) {
            gamma = g.stop_gradient(gamma);
            beta = g.stop_gradient(beta);
        }
        h = opts.train ? g.batch_norm_train(h, gamma, beta, &bn->stats)
                       : g.batch_norm_eval(h, gamma, beta, bn->stats);
    }
    switch (act) {
        case Act::ReLU: h = g.relu(h); break;
        case Act::LReLU: h = g.leaky_relu(h, real_t(0.2)); break;
        case Act::Tanh: h = g.tanh(h); break;
        case Act::None: break;
    }
    return h;
}

autodiff::NodeId Autoencoder::encode(autodiff::Graph& g, autodiff::NodeId x,
                                     const ForwardOptions& opts) {
    const Tensor& xv = g.value(x);
    if (xv.rank() != 4 || xv.dim(1) != spec_.in_channels || xv.dim(2) != spec_.input_size ||
        xv.dim(3) != spec_.input_size) {
        throw DimensionError("encode: input shape " + shape_to_string(xv.shape()) +
                             " does not match architecture '" + spec_.name + "'");
    }
    autodiff::NodeId h = x;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        EncodeOptions eo;
        eo.detach_params = opts.detach_params;
        eo.lambda_override = opts.lambda_override;
        eo.iterations_override = opts.iterations_override;
        h = fista_encode_node(g, h, *dicts_[i], fista_, eo);
        if (opts.codes_out) opts.codes_out->push_back(h);
        h = apply_norm_act(g, h, spec_.layers[i].enc_norm, spec_.layers[i].enc_act, enc_bn_[i],
                           opts);
    }
    const Tensor& hv = g.value(h);
    return g.reshape(h, {hv.dim(0), hv.dim(1)});
}

autodiff::NodeId Autoencoder::decode(autodiff::Graph& g, autodiff::NodeId z,
                                     const ForwardOptions& opts) {
    const Tensor& zv = g.value(z);
    if (zv.rank() != 2 || zv.dim(1) != latent_dim()) {
        throw DimensionError("decode: features shape " + shape_to_string(zv.shape()) +
                             " does not match latent dim " + std::to_string(latent_dim()));
    }
    autodiff::NodeId h = g.reshape(z, {zv.dim(0), zv.dim(1), 1, 1});
    for (std::size_t i = spec_.layers.size(); i-- > 0;) {
        h = decode_node(g, h, *dicts_[i], opts.detach_params);
        h = apply_norm_act(g, h, spec_.layers[i].dec_norm, spec_.layers[i].dec_act, dec_bn_[i],
                           opts);
    }
    return h;
}

LoopNodes Autoencoder::loop(autodiff::Graph& g, autodiff::NodeId x,
                            const ForwardOptions& encode_opts, const ForwardOptions& decode_opts,
                            const ForwardOptions& reencode_opts,
                            bool stop_gradient_at_reconstruction) {
    LoopNodes out;
    ForwardOptions eo = encode_opts;
    eo.codes_out = &out.codes;
    out.features = encode(g, x, eo);
    out.reconstruction = decode(g, out.features, decode_opts);
    autodiff::NodeId reenc_in = stop_gradient_at_reconstruction
                                    ? g.stop_gradient(out.reconstruction)
                                    : out.reconstruction;
    out.refeatures = encode(g, reenc_in, reencode_opts);
    return out;
}

Tensor Autoencoder::encode(const Tensor& x, const ForwardOptions& opts) {
    autodiff::Graph g;
    return g.value(encode(g, g.constant(x), opts));
}

Tensor Autoencoder::decode(const Tensor& z, const ForwardOptions& opts) {
    autodiff::Graph g;
    return g.value(decode(g, g.constant(z), opts));
}

Tensor Autoencoder::autoencode(const Tensor& x, const ForwardOptions& opts) {
    autodiff::Graph g;
    autodiff::NodeId z = encode(g, g.constant(x), opts);
    return g.value(decode(g, z, opts));
}

std::vector<autodiff::ParamPtr> Autoencoder::parameters() const {
    std::vector<autodiff::ParamPtr> out;
    for (const auto& d : dicts_) out.push_back(d->kernel());
    for (const auto& bn : enc_bn_) {
        if (bn) {
            out.push_back(bn->gamma);
            out.push_back(bn->beta);
        }
    }
    for (const auto& bn : dec_bn_) {
        if (bn) {
            out.push_back(bn->gamma);
            out.push_back(bn->beta);
        }
    }
    return out;
}

std::vector<autodiff::ParamPtr> Autoencoder::encoder_parameters() const {
    std::vector<autodiff::ParamPtr> out;
    for (const auto& d : dicts_) out.push_back(d->kernel());
    for (const auto& bn : enc_bn_) {
        if (bn) {
            out.push_back(bn->gamma);
            out.push_back(bn->beta);
        }
    }
    return out;
}

std::vector<autodiff::ParamPtr> Autoencoder::decoder_parameters() const {
    std::vector<autodiff::ParamPtr> out;
    for (const auto& d : dicts_) out.push_back(d->kernel());
    for (const auto& bn : dec_bn_) {
        if (bn) {
            out.push_back(bn->gamma);
            out.push_back(bn->beta);
        }
    }
    return out;
}

void Autoencoder::invalidate_lipschitz() {
    for (auto& d : dicts_) d->invalidate_lipschitz();
}

} // namespace csc::net
