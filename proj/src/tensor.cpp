#include "csc/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

namespace csc {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<real_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<real_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::atomic<int> g_num_threads{1};

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
}

/// Static partition of [0,n) over the configured thread count; each worker
/// writes a disjoint index range, so results do not depend on the setting.
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const int threads = std::min<std::int64_t>(g_num_threads.load(), n);
    if (threads <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    const std::int64_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min<std::int64_t>(lo + chunk, n);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace

void set_num_threads(int n) { g_num_threads.store(std::max(1, n)); }
int num_threads() { return g_num_threads.load(); }

// ---- Tensor -------------------------------------------------------------------

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    const std::int64_t n = shape_product(shape_);
    data_.assign(static_cast<std::size_t>(n), real_t(0));
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<real_t> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw DimensionError("tensor: data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, real_t value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::scalar(real_t value) { return Tensor({1}, {value}); }

real_t& Tensor::at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

real_t Tensor::at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

bool Tensor::all_finite() const {
    for (real_t v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::ensure_finite(const char* what) const {
    if (!all_finite()) {
        throw NumericError(std::string(what) + ": non-finite values");
    }
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) const {
    if (shape_product(shape) != size()) {
        throw DimensionError("reshape: element count mismatch " + shape_to_string(shape_) +
                             " -> " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

std::int64_t shape_product(const std::vector<std::int64_t>& shape) {
    if (shape.empty()) {
        throw DimensionError("tensor shape must have at least one dimension");
    }
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---- elementwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor scale(const Tensor& a, real_t c) {
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    return out;
}

Tensor axpy(const Tensor& a, real_t c, const Tensor& b) {
    check_same_shape(a, b, "axpy");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + c * b[i];
    return out;
}

real_t sum(const Tensor& a) {
    real_t s = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

real_t dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    real_t s = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

real_t squared_norm(const Tensor& a) { return dot(a, a); }

real_t l1_norm(const Tensor& a) {
    real_t s = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += std::abs(a[i]);
    return s;
}

real_t max_abs(const Tensor& a) {
    real_t m = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}

std::int64_t count_nonzero(const Tensor& a) {
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) n += (a[i] != real_t(0));
    return n;
}

// ---- nonlinearities ----------------------------------------------------------------

Tensor relu(const Tensor& t) {
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) out[i] = t[i] > 0 ? t[i] : real_t(0);
    return out;
}

Tensor leaky_relu(const Tensor& t, real_t slope) {
    if (slope < 0 || slope >= 1) throw DimensionError("leaky_relu: slope must be in [0,1)");
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) out[i] = t[i] > 0 ? t[i] : slope * t[i];
    return out;
}

Tensor tanh_map(const Tensor& t) {
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) out[i] = std::tanh(t[i]);
    return out;
}

Tensor soft_threshold(const Tensor& t, real_t lambda) {
    if (lambda < 0) throw DimensionError("soft_threshold: lambda must be nonnegative");
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const real_t v = t[i];
        const real_t m = std::abs(v) - lambda;
        out[i] = m > 0 ? (v > 0 ? m : -m) : real_t(0);
    }
    return out;
}

// ---- convolution ------------------------------------------------------------------

std::int64_t ConvGeometry::conv_output_size(std::int64_t extent) const {
    return (extent + 2 * padding - kernel_size) / stride + 1;
}

std::int64_t ConvGeometry::deconv_output_size(std::int64_t extent) const {
    return (extent - 1) * stride - 2 * padding + kernel_size;
}

void ConvGeometry::validate() const {
    if (kernel_size < 1 || stride < 1 || padding < 0 || in_channels < 1 || out_channels < 1) {
        throw DimensionError("conv geometry: invalid fields");
    }
}

namespace {

void check_kernel(const Tensor& kernel, const ConvGeometry& g, const char* op) {
    if (kernel.rank() != 4 || kernel.dim(0) != g.out_channels || kernel.dim(1) != g.in_channels ||
        kernel.dim(2) != g.kernel_size || kernel.dim(3) != g.kernel_size) {
        throw DimensionError(std::string(op) + ": kernel shape " + shape_to_string(kernel.shape()) +
                             " does not match geometry");
    }
}

/// Gathers the receptive field of every output position of one sample into
/// a [Cin*k*k, H'*W'] column-major patch matrix (zero padding applied).
void im2col(const real_t* x, std::int64_t c_in, std::int64_t h, std::int64_t w,
            const ConvGeometry& g, std::int64_t oh, std::int64_t ow, real_t* cols) {
    const std::int64_t k = g.kernel_size;
    const std::int64_t cols_n = oh * ow;
    for (std::int64_t c = 0; c < c_in; ++c) {
        for (std::int64_t p = 0; p < k; ++p) {
            for (std::int64_t q = 0; q < k; ++q) {
                const std::int64_t row = (c * k + p) * k + q;
                real_t* dst = cols + row * cols_n;
                for (std::int64_t i = 0; i < oh; ++i) {
                    const std::int64_t src_i = i * g.stride - g.padding + p;
                    if (src_i < 0 || src_i >= h) {
                        std::fill(dst + i * ow, dst + (i + 1) * ow, real_t(0));
                        continue;
                    }
                    const real_t* src_row = x + (c * h + src_i) * w;
                    for (std::int64_t j = 0; j < ow; ++j) {
                        const std::int64_t src_j = j * g.stride - g.padding + q;
                        dst[i * ow + j] =
                            (src_j < 0 || src_j >= w) ? real_t(0) : src_row[src_j];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-adds a patch matrix back onto one sample.
void col2im(const real_t* cols, std::int64_t c_in, std::int64_t h, std::int64_t w,
            const ConvGeometry& g, std::int64_t oh, std::int64_t ow, real_t* x) {
    const std::int64_t k = g.kernel_size;
    const std::int64_t cols_n = oh * ow;
    for (std::int64_t c = 0; c < c_in; ++c) {
        for (std::int64_t p = 0; p < k; ++p) {
            for (std::int64_t q = 0; q < k; ++q) {
                const std::int64_t row = (c * k + p) * k + q;
                const real_t* src = cols + row * cols_n;
                for (std::int64_t i = 0; i < oh; ++i) {
                    const std::int64_t dst_i = i * g.stride - g.padding + p;
                    if (dst_i < 0 || dst_i >= h) continue;
                    real_t* dst_row = x + (c * h + dst_i) * w;
                    for (std::int64_t j = 0; j < ow; ++j) {
                        const std::int64_t dst_j = j * g.stride - g.padding + q;
                        if (dst_j >= 0 && dst_j < w) dst_row[dst_j] += src[i * ow + j];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom) {
    geom.validate();
    check_kernel(kernel, geom, "conv2d");
    if (input.rank() != 4 || input.dim(1) != geom.in_channels) {
        throw DimensionError("conv2d: input shape " + shape_to_string(input.shape()) +
                             " does not match geometry (in_channels=" +
                             std::to_string(geom.in_channels) + ")");
    }
    input.ensure_finite("conv2d input");
    kernel.ensure_finite("conv2d kernel");

    const std::int64_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
    const std::int64_t oh = geom.conv_output_size(h), ow = geom.conv_output_size(w);
    if (oh < 1 || ow < 1) {
        throw DimensionError("conv2d: output size would be " + std::to_string(oh) + "x" +
                             std::to_string(ow));
    }
    const std::int64_t patch = geom.in_channels * geom.kernel_size * geom.kernel_size;
    Tensor out({n, geom.out_channels, oh, ow});

    // One GEMM per sample keeps results independent of the batch partition.
    parallel_for(n, [&](std::int64_t s) {
        std::vector<real_t> cols(static_cast<std::size_t>(patch * oh * ow));
        im2col(input.data() + s * geom.in_channels * h * w, geom.in_channels, h, w, geom, oh, ow,
               cols.data());
        ConstMatMap kmat(kernel.data(), geom.out_channels, patch);
        ConstMatMap cmat(cols.data(), patch, oh * ow);
        MatMap omat(out.data() + s * geom.out_channels * oh * ow, geom.out_channels, oh * ow);
        omat.noalias() = kmat * cmat;
    });
    return out;
}

Tensor deconv2d(const Tensor& code, const Tensor& kernel, const ConvGeometry& geom) {
    geom.validate();
    check_kernel(kernel, geom, "deconv2d");
    if (code.rank() != 4 || code.dim(1) != geom.out_channels) {
        throw DimensionError("deconv2d: code shape " + shape_to_string(code.shape()) +
                             " does not match geometry (out_channels=" +
                             std::to_string(geom.out_channels) + ")");
    }
    code.ensure_finite("deconv2d code");
    kernel.ensure_finite("deconv2d kernel");

    const std::int64_t n = code.dim(0), oh = code.dim(2), ow = code.dim(3);
    const std::int64_t h = geom.deconv_output_size(oh), w = geom.deconv_output_size(ow);
    if (h < 1 || w < 1) {
        throw DimensionError("deconv2d: output size would be " + std::to_string(h) + "x" +
                             std::to_string(w));
    }
    const std::int64_t patch = geom.in_channels * geom.kernel_size * geom.kernel_size;
    Tensor out({n, geom.in_channels, h, w});

    parallel_for(n, [&](std::int64_t s) {
        std::vector<real_t> cols(static_cast<std::size_t>(patch * oh * ow));
        ConstMatMap kmat(kernel.data(), geom.out_channels, patch);
        ConstMatMap zmat(code.data() + s * geom.out_channels * oh * ow, geom.out_channels,
                         oh * ow);
        MatMap cmat(cols.data(), patch, oh * ow);
        cmat.noalias() = kmat.transpose() * zmat;
        col2im(cols.data(), geom.in_channels, h, w, geom, oh, ow,
               out.data() + s * geom.in_channels * h * w);
    });
    return out;
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& out_grad, const ConvGeometry& geom) {
    geom.validate();
    if (input.rank() != 4 || out_grad.rank() != 4 || input.dim(0) != out_grad.dim(0) ||
        input.dim(1) != geom.in_channels || out_grad.dim(1) != geom.out_channels) {
        throw DimensionError("conv2d_kernel_grad: shape mismatch");
    }
    const std::int64_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
    const std::int64_t oh = out_grad.dim(2), ow = out_grad.dim(3);
    if (oh != geom.conv_output_size(h) || ow != geom.conv_output_size(w)) {
        throw DimensionError("conv2d_kernel_grad: out_grad spatial size mismatch");
    }
    const std::int64_t patch = geom.in_channels * geom.kernel_size * geom.kernel_size;

    // Per-sample contributions computed independently, then reduced in index
    // order so the result does not depend on the thread count.
    std::vector<std::vector<real_t>> partial(static_cast<std::size_t>(n));
    parallel_for(n, [&](std::int64_t s) {
        std::vector<real_t> cols(static_cast<std::size_t>(patch * oh * ow));
        im2col(input.data() + s * geom.in_channels * h * w, geom.in_channels, h, w, geom, oh, ow,
               cols.data());
        partial[static_cast<std::size_t>(s)].assign(
            static_cast<std::size_t>(geom.out_channels * patch), real_t(0));
        ConstMatMap gmat(out_grad.data() + s * geom.out_channels * oh * ow, geom.out_channels,
                         oh * ow);
        ConstMatMap cmat(cols.data(), patch, oh * ow);
        MatMap pmat(partial[static_cast<std::size_t>(s)].data(), geom.out_channels, patch);
        pmat.noalias() = gmat * cmat.transpose();
    });

    Tensor grad({geom.out_channels, geom.in_channels, geom.kernel_size, geom.kernel_size});
    for (std::int64_t s = 0; s < n; ++s) {
        const auto& p = partial[static_cast<std::size_t>(s)];
        for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] += p[static_cast<std::size_t>(i)];
    }
    return grad;
}

// ---- batch norm ---------------------------------------------------------------------

BnRunning BnRunning::make(std::int64_t channels) {
    BnRunning s;
    s.mean = Tensor::zeros({channels});
    s.var = Tensor::full({channels}, real_t(1));
    return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnRunning& stats,
                  bool train) {
    if (x.rank() != 4) throw DimensionError("batch_norm: expected NCHW input");
    const std::int64_t c = x.dim(1);
    if (gamma.size() != c || beta.size() != c || stats.mean.size() != c ||
        stats.var.size() != c) {
        throw DimensionError("batch_norm: channel count mismatch");
    }
    x.ensure_finite("batch_norm input");

    const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::int64_t m = n * h * w;
    Tensor out(x.shape());

    for (std::int64_t ch = 0; ch < c; ++ch) {
        real_t mean, var;
        if (train) {
            real_t s = 0, s2 = 0;
            for (std::int64_t s_i = 0; s_i < n; ++s_i)
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t j = 0; j < w; ++j) {
                        const real_t v = x.at4(s_i, ch, i, j);
                        s += v;
                        s2 += v * v;
                    }
            mean = s / static_cast<real_t>(m);
            var = s2 / static_cast<real_t>(m) - mean * mean;
            if (var < 0) var = 0;
            const real_t unbiased =
                m > 1 ? var * static_cast<real_t>(m) / static_cast<real_t>(m - 1) : var;
            stats.mean[ch] = (1 - stats.momentum) * stats.mean[ch] + stats.momentum * mean;
            stats.var[ch] = (1 - stats.momentum) * stats.var[ch] + stats.momentum * unbiased;
        } else {
            mean = stats.mean[ch];
            var = stats.var[ch];
        }
        const real_t inv = real_t(1) / std::sqrt(var + stats.eps);
        const real_t g = gamma[ch], b = beta[ch];
        for (std::int64_t s_i = 0; s_i < n; ++s_i)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    out.at4(s_i, ch, i, j) = g * (x.at4(s_i, ch, i, j) - mean) * inv + b;
    }
    return out;
}

} // namespace csc
