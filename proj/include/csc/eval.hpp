#pragma once

#include <string>
#include <vector>

#include "csc/data_io.hpp"
#include "csc/networks.hpp"
#include "csc/tensor.hpp"

namespace csc::eval {

/// Image-fidelity summary for [-1,1]-range images (PSNR peak value 2.0).
struct MetricReport {
    real_t psnr = 0;  ///< dB, capped at 99 for identical inputs
    real_t mse = 0;
    real_t ssim = 0;
};

real_t mse(const Tensor& x, const Tensor& y);
/// 10*log10(peak^2/mse) with peak = 2.0; 99 dB when mse underflows.
real_t psnr(const Tensor& x, const Tensor& y);
/// Structural similarity, 11x11 Gaussian window sigma=1.5, K1=0.01,
/// K2=0.03, dynamic range 2.0; mean over windows, channels and batch.
real_t ssim(const Tensor& x, const Tensor& y);
MetricReport metrics(const Tensor& x, const Tensor& y);

struct SweepRow {
    real_t lambda = 0;
    MetricReport report;
};

/// Re-encodes noisy inputs under each sparsity override and scores the
/// reconstruction against the clean images. No retraining involved.
std::vector<SweepRow> denoise_sweep(net::Autoencoder& model, const data::Dataset& clean,
                                    real_t sigma, const std::vector<real_t>& lambda_grid,
                                    std::uint64_t noise_seed, int iterations_override = 0,
                                    bool clip = true);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

/// Principal components (descending eigenvalue order) of mean-centered
/// feature rows; each column of the result is one component.
Tensor pca_components(const Tensor& features, std::int64_t top_k);

struct PcaSelection {
    std::vector<std::vector<std::int64_t>> sample_indices;  ///< per component
    Tensor components;                                      ///< [d, top_k]
};

/// For one class: PCA of its features, then for every component the samples
/// with the largest |projection| (ties broken by sample index). Their
/// reconstructions are rendered one grid per component when out_prefix is
/// nonempty.
PcaSelection class_pca_reconstruct(net::Autoencoder& model, const data::Dataset& ds,
                                   int class_label, std::int64_t top_k,
                                   std::int64_t per_component,
                                   const std::string& out_prefix = "");

/// Decodes the linear path alpha*f(x1) + (1-alpha)*f(x2) for `steps` uniform
/// alphas in [0,1]; the first frame equals autoencode(x2) and the last
/// equals autoencode(x1), bit-exactly.
Tensor interpolate(net::Autoencoder& model, const Tensor& x1, const Tensor& x2,
                   std::int64_t steps);

} // namespace csc::eval
