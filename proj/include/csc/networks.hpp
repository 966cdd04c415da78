#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "csc/autodiff.hpp"
#include "csc/csc_layer.hpp"
#include "csc/tensor.hpp"

namespace csc::net {

enum class Norm { None, Batch };
enum class Act { None, ReLU, LReLU, Tanh };

const char* to_string(Norm n);
const char* to_string(Act a);
Norm norm_from_string(const std::string& s);
Act act_from_string(const std::string& s);

/// One dictionary's place in the stack. enc_* decorates the coding layer
/// (applied to the code), dec_* decorates the mirrored synthesis layer
/// (applied to the reconstructed signal of this dictionary).
struct LayerDesc {
    std::int64_t out_channels = 0;
    std::int64_t kernel = 4;
    std::int64_t stride = 2;
    std::int64_t padding = 1;
    Norm enc_norm = Norm::None;
    Act enc_act = Act::None;
    Norm dec_norm = Norm::None;
    Act dec_act = Act::None;
};

/// Encoder layout; the decoder is always its exact mirror (reversed order,
/// channels swapped, convolution transposed) so every dictionary is shared.
struct ArchitectureSpec {
    std::string name;
    std::int64_t in_channels = 3;
    std::int64_t input_size = 32;  ///< square input, pixels
    std::vector<LayerDesc> layers;

    /// Built-in stacks: "cifar" (32x32), "stl" (64x64), "toy" (16x16,
    /// halved widths for desk-scale work).
    static ArchitectureSpec preset(const std::string& name);

    std::int64_t latent_dim() const;
    /// Spatial size after each encoder layer (validates on the way).
    std::vector<std::int64_t> spatial_trace() const;
    std::vector<std::int64_t> channel_trace() const;
    void validate() const;
};

/// Per-instance batch-norm block: learnable scale/shift plus running stats.
struct BnBlock {
    autodiff::ParamPtr gamma;
    autodiff::ParamPtr beta;
    BnRunning stats;
};

struct LoopNodes {
    autodiff::NodeId features;       ///< Z = f(x), [N,d]
    autodiff::NodeId reconstruction; ///< x_hat = g(Z)
    autodiff::NodeId refeatures;     ///< Z_hat = f(x_hat), [N,d]
    std::vector<autodiff::NodeId> codes;  ///< first-pass code of every layer
};

struct ForwardOptions {
    bool train = false;
    bool detach_params = false;
    real_t lambda_override = -1;
    int iterations_override = 0;
    std::vector<autodiff::NodeId>* codes_out = nullptr;
};

/// Stack of convolutional sparse coding layers (encoder) and the mirrored
/// sparse deconvolution stack (decoder) reading the same dictionaries.
class Autoencoder {
public:
    Autoencoder(ArchitectureSpec spec, FistaConfig fista, std::uint64_t init_seed);

    const ArchitectureSpec& spec() const { return spec_; }
    const FistaConfig& fista() const { return fista_; }
    std::int64_t latent_dim() const { return spec_.latent_dim(); }

    // ---- graph builders ----
    /// x [N,C,H,W] -> features [N,d].
    autodiff::NodeId encode(autodiff::Graph& g, autodiff::NodeId x, const ForwardOptions& opts);
    /// features [N,d] -> image [N,C,H,W].
    autodiff::NodeId decode(autodiff::Graph& g, autodiff::NodeId z, const ForwardOptions& opts);
    /// X -> Z -> X_hat -> Z_hat with the second encoding pass configurable.
    LoopNodes loop(autodiff::Graph& g, autodiff::NodeId x, const ForwardOptions& encode_opts,
                   const ForwardOptions& decode_opts, const ForwardOptions& reencode_opts,
                   bool stop_gradient_at_reconstruction = false);

    // ---- plain-tensor conveniences (eval-mode unless train requested) ----
    Tensor encode(const Tensor& x, const ForwardOptions& opts = {});
    Tensor decode(const Tensor& z, const ForwardOptions& opts = {});
    Tensor autoencode(const Tensor& x, const ForwardOptions& opts = {});

    /// All trainable parameters in a stable, named order: dictionaries
    /// first, then encoder BN scale/shift, then decoder BN scale/shift.
    std::vector<autodiff::ParamPtr> parameters() const;
    std::vector<std::shared_ptr<ConvDictionary>>& dictionaries() { return dicts_; }
    const std::vector<std::shared_ptr<ConvDictionary>>& dictionaries() const { return dicts_; }
    std::vector<std::optional<BnBlock>>& encoder_bn() { return enc_bn_; }
    std::vector<std::optional<BnBlock>>& decoder_bn() { return dec_bn_; }
    const std::vector<std::optional<BnBlock>>& encoder_bn() const { return enc_bn_; }
    const std::vector<std::optional<BnBlock>>& decoder_bn() const { return dec_bn_; }

    /// Parameters owned by the encoder role (dictionaries + encoder BN).
    std::vector<autodiff::ParamPtr> encoder_parameters() const;
    /// Parameters owned by the decoder role (dictionaries + decoder BN).
    std::vector<autodiff::ParamPtr> decoder_parameters() const;

    void invalidate_lipschitz();

private:
    autodiff::NodeId apply_norm_act(autodiff::Graph& g, autodiff::NodeId h, Norm norm, Act act,
                                    std::optional<BnBlock>& bn, const ForwardOptions& opts);

    ArchitectureSpec spec_;
    FistaConfig fista_;
    std::vector<std::shared_ptr<ConvDictionary>> dicts_;
    std::vector<std::optional<BnBlock>> enc_bn_;
    std::vector<std::optional<BnBlock>> dec_bn_;
};

} // namespace csc::net
