#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "csc/csc_layer.hpp"
#include "csc/tensor.hpp"

namespace csc::data {

/// Image collection in [-1,1], NCHW, with optional labels.
struct Dataset {
    Tensor images;
    std::vector<int> labels;  ///< empty when unlabeled

    std::int64_t count() const { return images.empty() ? 0 : images.dim(0); }
    /// Rows [lo, hi) as a new dataset.
    Dataset slice(std::int64_t lo, std::int64_t hi) const;
    /// Single batch gathered by index list.
    Tensor gather(const std::vector<std::int64_t>& indices) const;
};

enum class Magnitude {
    Normal,        ///< standard normal values
    UniformSigned  ///< |v| uniform in [0.5, 1.5], random sign
};

/// Ground-truth sparse generative model: per-layer dictionaries applied as
/// sparse deconvolutions from a top-level code, plus isotropic noise.
struct SyntheticModel {
    std::vector<std::shared_ptr<ConvDictionary>> layers;  ///< synthesis order (top first)
    real_t density = 0.02;          ///< expected fraction of nonzero code entries
    Magnitude magnitude = Magnitude::Normal;
    real_t noise_std = 0.01;
    std::int64_t code_h = 1;
    std::int64_t code_w = 1;

    /// Single-stage model with a fresh random unit-atom dictionary.
    static SyntheticModel single_layer(std::int64_t code_channels, std::int64_t image_channels,
                                       std::int64_t kernel, std::int64_t stride,
                                       std::int64_t padding, std::int64_t code_h,
                                       std::int64_t code_w, std::uint64_t dict_seed);
};

struct SyntheticSample {
    Dataset data;
    Tensor codes;     ///< top-level codes consistent with the returned images
    real_t scale = 1; ///< factor applied to keep images within [-1,1]
};

/// Draws n samples: sparse codes, synthesis through every layer, noise, and
/// a single global rescale into [-1,1] (codes and noise scale with it, so
/// images stay exactly consistent with the returned codes).
SyntheticSample sample_synthetic(const SyntheticModel& model, std::int64_t n,
                                 std::uint64_t seed);

/// Reads one CIFAR-10 binary batch (3073-byte records: label byte + 3072
/// channel-major pixel bytes), mapping pixels to [-1,1] via x/127.5 - 1.
Dataset load_cifar10(const std::string& path);
/// Writes records in the same layout ([-1,1] mapped back to bytes).
void save_cifar10(const std::string& path, const Dataset& ds);

/// x + N(0, sigma^2), then clipped to [-1,1] unless clip=false.
Dataset add_gaussian_noise(const Dataset& ds, real_t sigma, std::uint64_t seed,
                           bool clip = true);

/// 2x2 average pooling (halves both spatial dimensions).
Dataset downsample2x(const Dataset& ds);

// ---- tensor file format --------------------------------------------------------
// Header: magic "CSCT", u32 version, u32 dtype code (1=float64, 2=float32),
// u32 rank, u64 dims[rank]; then the raw little-endian payload.

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// ---- image output -----------------------------------------------------------------

/// Renders [N,3,H,W] tensors in [-1,1] as one binary PPM (P6) row of tiles
/// with 2-pixel black separators; [-1,1] -> [0,255] by round((x+1)*127.5).
void write_image_grid(const std::string& path, const Tensor& images);

} // namespace csc::data
