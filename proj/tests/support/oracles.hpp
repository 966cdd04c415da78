#pragma once

// Independent reference implementations used to verify the library. These
// deliberately avoid the library's computational paths: convolutions are
// plain nested loops, the LASSO solver is coordinate descent on the
// flattened matrix problem, and coding rates come from an eigenvalue sum.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csc/csc_layer.hpp"
#include "csc/tensor.hpp"

namespace csc::oracle {

/// Direct six-loop strided cross-correlation.
Tensor naive_conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom);
/// Direct scatter transposed convolution.
Tensor naive_deconv2d(const Tensor& code, const Tensor& kernel, const ConvGeometry& geom);

/// Dense matrix equivalent of deconv2d for a single sample: columns indexed
/// by code entries, rows by output pixels.
std::vector<std::vector<double>> synthesis_matrix(const ConvDictionary& dict,
                                                  std::int64_t code_h, std::int64_t code_w);

struct LassoSolution {
    std::vector<double> z;
    double objective = 0;
    int sweeps = 0;
};

/// Cyclic coordinate descent for min_z lambda*||z||_1 + 1/2||x - D z||^2,
/// run to stationarity (max coordinate move below tol).
LassoSolution lasso_coordinate_descent(const std::vector<std::vector<double>>& dense_dict,
                                       const std::vector<double>& x, double lambda,
                                       double tol = 1e-14, int max_sweeps = 200000);

/// 1/2 sum_i log(1 + c * sigma_i^2) over the singular values of Z [d x n],
/// with c = d/(n*eps_sq).
double coding_rate_svd(const Tensor& z, double eps_sq);

/// Central-difference derivative of f at (param + h*e_i) for one coordinate.
double central_difference(const std::function<double()>& eval, real_t* slot, double h);

/// Minimal P6 reader for round-trip checks.
struct PpmImage {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<unsigned char> rgb;
};
PpmImage read_ppm(const std::string& path);

/// Hand-rolled scalar Adam trace (bias-corrected), one value per step.
std::vector<double> scalar_adam_trace(double x0, const std::vector<double>& grads, double lr,
                                      double beta1, double beta2, double eps);

} // namespace csc::oracle
