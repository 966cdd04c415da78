#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csc/errors.hpp"

namespace csc {

#ifdef CSC_REAL_FLOAT32
using real_t = float;
#else
using real_t = double;
#endif

/// Dense N-dimensional array, row-major contiguous. Images and feature maps
/// use NCHW layout. Operations return new tensors; a Tensor is never mutated
/// through another Tensor, so values can be shared freely across threads.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);
    Tensor(std::vector<std::int64_t> shape, std::vector<real_t> data);

    static Tensor zeros(std::vector<std::int64_t> shape);
    static Tensor full(std::vector<std::int64_t> shape, real_t value);
    /// Scalar (shape [1]) tensor.
    static Tensor scalar(real_t value);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    real_t* data() { return data_.data(); }
    const real_t* data() const { return data_.data(); }
    std::span<real_t> values() { return data_; }
    std::span<const real_t> values() const { return data_; }

    real_t& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    real_t operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    /// Element access for rank-4 NCHW tensors.
    real_t& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
    real_t at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    /// Throws NumericError when any element is NaN or infinite.
    void ensure_finite(const char* what) const;

    /// Same data, new shape (element count must match).
    Tensor reshaped(std::vector<std::int64_t> shape) const;

private:
    std::vector<std::int64_t> shape_;
    std::vector<real_t> data_;
};

std::int64_t shape_product(const std::vector<std::int64_t>& shape);
std::string shape_to_string(const std::vector<std::int64_t>& shape);

// ---- elementwise arithmetic ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real_t c);
/// a + c*b, shapes must match.
Tensor axpy(const Tensor& a, real_t c, const Tensor& b);

// ---- reductions -------------------------------------------------------------

real_t sum(const Tensor& a);
real_t dot(const Tensor& a, const Tensor& b);
real_t squared_norm(const Tensor& a);
real_t l1_norm(const Tensor& a);
real_t max_abs(const Tensor& a);
std::int64_t count_nonzero(const Tensor& a);

// ---- nonlinearities ----------------------------------------------------------

Tensor relu(const Tensor& t);
Tensor leaky_relu(const Tensor& t, real_t slope);
Tensor tanh_map(const Tensor& t);
/// sign(v) * max(|v| - lambda, 0), the l1 proximal operator.
Tensor soft_threshold(const Tensor& t, real_t lambda);

// ---- convolution ------------------------------------------------------------

/// Geometry of one convolution dictionary. conv2d maps in_channels ->
/// out_channels while reducing the spatial size; deconv2d is its exact
/// adjoint and maps back.
struct ConvGeometry {
    std::int64_t kernel_size = 4;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t in_channels = 1;
    std::int64_t out_channels = 1;

    /// floor((extent + 2*padding - kernel)/stride) + 1
    std::int64_t conv_output_size(std::int64_t extent) const;
    /// (extent - 1)*stride - 2*padding + kernel
    std::int64_t deconv_output_size(std::int64_t extent) const;
    void validate() const;
};

/// Strided cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin,k,k]
/// -> [N,Cout,H',W'] with out[n,m,i,j] = sum_{c,p,q}
/// input[n,c,i*s-pad+p, j*s-pad+q] * kernel[m,c,p,q] (zero outside).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom);

/// Transposed convolution, the adjoint of conv2d with the same kernel and
/// geometry: <conv2d(x,K), z> == <x, deconv2d(z,K)>. code [N,Cout,H',W']
/// -> [N,Cin,H,W].
Tensor deconv2d(const Tensor& code, const Tensor& kernel, const ConvGeometry& geom);

/// Gradient of sum(out_grad ⊙ conv2d(input, K)) with respect to K.
/// Also serves deconv2d's kernel gradient with (input, out_grad) swapped.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& out_grad,
                          const ConvGeometry& geom);

// ---- batch normalization ------------------------------------------------------

/// Running statistics of one batch-norm instance. The learnable scale/shift
/// live with the caller (they are trainable parameters).
struct BnRunning {
    Tensor mean;
    Tensor var;
    real_t momentum = 0.1;
    real_t eps = 1e-5;

    static BnRunning make(std::int64_t channels);
};

/// Train mode normalizes with batch statistics and updates the running
/// statistics in place; eval mode normalizes with the running statistics.
/// gamma/beta are per-channel scale/shift, shape [C].
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BnRunning& stats, bool train);

// ---- threading ----------------------------------------------------------------

/// Worker-thread count used by the convolution loops. 1 disables threading.
/// Results are bit-identical for any setting.
void set_num_threads(int n);
int num_threads();

} // namespace csc
