#include "csc/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace csc::eval {

real_t mse(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) throw DimensionError("mse: shape mismatch");
    return squared_norm(sub(x, y)) / static_cast<real_t>(x.size());
}

real_t psnr(const Tensor& x, const Tensor& y) {
    const real_t m = mse(x, y);
    constexpr real_t peak = 2;  // [-1,1] dynamic range
    if (m <= 0) return 99;
    const real_t v = 10 * std::log10(peak * peak / m);
    return std::min<real_t>(v, 99);
}

namespace {

std::vector<real_t> gaussian_window(int size, real_t sigma) {
    std::vector<real_t> w(static_cast<std::size_t>(size));
    const real_t c = (size - 1) / real_t(2);
    real_t total = 0;
    for (int i = 0; i < size; ++i) {
        w[static_cast<std::size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2 * sigma * sigma));
        total += w[static_cast<std::size_t>(i)];
    }
    for (auto& v : w) v /= total;
    return w;
}

/// Separable windowed mean over valid positions of one channel plane.
void window_filter(const real_t* img, std::int64_t h, std::int64_t w,
                   const std::vector<real_t>& win, std::vector<real_t>& tmp,
                   std::vector<real_t>& out) {
    const std::int64_t k = static_cast<std::int64_t>(win.size());
    const std::int64_t oh = h - k + 1, ow = w - k + 1;
    tmp.assign(static_cast<std::size_t>(h * ow), 0);
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
            real_t s = 0;
            for (std::int64_t q = 0; q < k; ++q) s += win[static_cast<std::size_t>(q)] * img[i * w + j + q];
            tmp[static_cast<std::size_t>(i * ow + j)] = s;
        }
    out.assign(static_cast<std::size_t>(oh * ow), 0);
    for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
            real_t s = 0;
            for (std::int64_t p = 0; p < k; ++p)
                s += win[static_cast<std::size_t>(p)] * tmp[static_cast<std::size_t>((i + p) * ow + j)];
            out[static_cast<std::size_t>(i * ow + j)] = s;
        }
}

} // namespace

real_t ssim(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) throw DimensionError("ssim: shape mismatch");
    if (x.rank() != 4) throw DimensionError("ssim: expected NCHW");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int win_size = 11;
    if (h < win_size || w < win_size) throw DimensionError("ssim: image smaller than window");
    const auto win = gaussian_window(win_size, real_t(1.5));
    constexpr real_t range = 2;
    const real_t c1 = (real_t(0.01) * range) * (real_t(0.01) * range);
    const real_t c2 = (real_t(0.03) * range) * (real_t(0.03) * range);

    std::vector<real_t> tmp, mu_x, mu_y, xx, yy, xy, m_xx, m_yy, m_xy;
    std::vector<real_t> plane_x2(static_cast<std::size_t>(h * w));
    std::vector<real_t> plane_y2(static_cast<std::size_t>(h * w));
    std::vector<real_t> plane_xy(static_cast<std::size_t>(h * w));
    real_t total = 0;
    std::int64_t planes = 0;
    for (std::int64_t s = 0; s < n; ++s) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const real_t* px = x.data() + (s * c + ch) * h * w;
            const real_t* py = y.data() + (s * c + ch) * h * w;
            for (std::int64_t i = 0; i < h * w; ++i) {
                plane_x2[static_cast<std::size_t>(i)] = px[i] * px[i];
                plane_y2[static_cast<std::size_t>(i)] = py[i] * py[i];
                plane_xy[static_cast<std::size_t>(i)] = px[i] * py[i];
            }
            window_filter(px, h, w, win, tmp, mu_x);
            window_filter(py, h, w, win, tmp, mu_y);
            window_filter(plane_x2.data(), h, w, win, tmp, m_xx);
            window_filter(plane_y2.data(), h, w, win, tmp, m_yy);
            window_filter(plane_xy.data(), h, w, win, tmp, m_xy);
            real_t plane_sum = 0;
            for (std::size_t i = 0; i < mu_x.size(); ++i) {
                const real_t mx = mu_x[i], my = mu_y[i];
                const real_t vx = m_xx[i] - mx * mx;
                const real_t vy = m_yy[i] - my * my;
                const real_t cov = m_xy[i] - mx * my;
                plane_sum += ((2 * mx * my + c1) * (2 * cov + c2)) /
                             ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
            total += plane_sum / static_cast<real_t>(mu_x.size());
            planes += 1;
        }
    }
    return total / static_cast<real_t>(planes);
}

MetricReport metrics(const Tensor& x, const Tensor& y) {
    MetricReport r;
    r.mse = mse(x, y);
    r.psnr = psnr(x, y);
    r.ssim = ssim(x, y);
    return r;
}

std::vector<SweepRow> denoise_sweep(net::Autoencoder& model, const data::Dataset& clean,
                                    real_t sigma, const std::vector<real_t>& lambda_grid,
                                    std::uint64_t noise_seed, int iterations_override,
                                    bool clip) {
    if (lambda_grid.empty()) throw ConfigError("denoise_sweep: empty lambda grid");
    const data::Dataset noisy = data::add_gaussian_noise(clean, sigma, noise_seed, clip);
    std::vector<SweepRow> rows;
    for (real_t lambda : lambda_grid) {
        net::ForwardOptions opts;
        opts.lambda_override = lambda;
        opts.iterations_override = iterations_override;
        const Tensor denoised = model.autoencode(noisy.images, opts);
        SweepRow row;
        row.lambda = lambda;
        row.report = metrics(denoised, clean.images);
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "lambda,psnr,mse,ssim\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g\n",
                      static_cast<double>(r.lambda), static_cast<double>(r.report.psnr),
                      static_cast<double>(r.report.mse), static_cast<double>(r.report.ssim));
        os << buf;
    }
    return os.str();
}

Tensor pca_components(const Tensor& features, std::int64_t top_k) {
    if (features.rank() != 2) throw DimensionError("pca: expected [n,d] features");
    const std::int64_t n = features.dim(0), d = features.dim(1);
    if (top_k < 1 || top_k > d) {
        throw DimensionError("pca: top_k must lie in [1, feature_dim]");
    }
    if (top_k > n) throw DimensionError("pca: top_k exceeds the sample count");

    Eigen::MatrixXd f(n, d);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            f(i, j) = static_cast<double>(features[i * d + j]);
    const Eigen::RowVectorXd mean = f.colwise().mean();
    f.rowwise() -= mean;
    const Eigen::MatrixXd cov = (f.transpose() * f) / std::max<double>(1.0, double(n - 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");

    Tensor comps({d, top_k});
    // Eigenvalues ascend; take the trailing columns in descending order.
    for (std::int64_t k = 0; k < top_k; ++k) {
        const auto col = eig.eigenvectors().col(d - 1 - k);
        for (std::int64_t j = 0; j < d; ++j)
            comps[j * top_k + k] = static_cast<real_t>(col(j));
    }
    return comps;
}

PcaSelection class_pca_reconstruct(net::Autoencoder& model, const data::Dataset& ds,
                                   int class_label, std::int64_t top_k,
                                   std::int64_t per_component, const std::string& out_prefix) {
    if (ds.labels.empty()) throw ConfigError("class_pca_reconstruct: dataset has no labels");
    std::vector<std::int64_t> members;
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        if (ds.labels[i] == class_label) members.push_back(static_cast<std::int64_t>(i));
    }
    if (members.empty()) {
        throw ConfigError("class_pca_reconstruct: class " + std::to_string(class_label) +
                          " is empty");
    }
    if (static_cast<std::int64_t>(members.size()) < top_k) {
        throw ConfigError("class_pca_reconstruct: class has fewer samples than top_k");
    }

    const Tensor images = ds.gather(members);
    const Tensor features = model.encode(images);
    const std::int64_t n = features.dim(0), d = features.dim(1);

    PcaSelection sel;
    sel.components = pca_components(features, top_k);

    // Center with the same mean the PCA used.
    std::vector<real_t> mean(static_cast<std::size_t>(d), 0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += features[i * d + j];
    for (auto& v : mean) v /= static_cast<real_t>(n);

    const std::int64_t take = std::min<std::int64_t>(per_component, n);
    for (std::int64_t k = 0; k < top_k; ++k) {
        std::vector<std::pair<real_t, std::int64_t>> scored;
        for (std::int64_t i = 0; i < n; ++i) {
            real_t proj = 0;
            for (std::int64_t j = 0; j < d; ++j) {
                proj += (features[i * d + j] - mean[static_cast<std::size_t>(j)]) *
                        sel.components[j * top_k + k];
            }
            scored.emplace_back(std::abs(proj), i);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<std::int64_t> chosen;
        for (std::int64_t i = 0; i < take; ++i) chosen.push_back(scored[static_cast<std::size_t>(i)].second);
        sel.sample_indices.push_back(chosen);

        if (!out_prefix.empty()) {
            std::vector<std::int64_t> global;
            for (std::int64_t local : chosen) global.push_back(members[static_cast<std::size_t>(local)]);
            const Tensor picked = ds.gather(global);
            const Tensor recon = model.autoencode(picked);
            data::write_image_grid(out_prefix + "_pc" + std::to_string(k + 1) + ".ppm", recon);
        }
    }
    return sel;
}

Tensor interpolate(net::Autoencoder& model, const Tensor& x1, const Tensor& x2,
                   std::int64_t steps) {
    if (steps < 2) throw ConfigError("interpolate: steps must be >= 2");
    if (!x1.same_shape(x2) || x1.rank() != 4 || x1.dim(0) != 1) {
        throw DimensionError("interpolate: expected two single-image [1,C,H,W] tensors");
    }
    const Tensor z1 = model.encode(x1);
    const Tensor z2 = model.encode(x2);

    Tensor frames;
    for (std::int64_t i = 0; i < steps; ++i) {
        const real_t alpha = static_cast<real_t>(i) / static_cast<real_t>(steps - 1);
        Tensor z;
        // Exact endpoints: reuse the encoded features untouched.
        if (i == 0) {
            z = z2;
        } else if (i == steps - 1) {
            z = z1;
        } else {
            z = axpy(scale(z1, alpha), 1 - alpha, z2);
        }
        const Tensor frame = model.decode(z);
        if (frames.empty()) {
            frames = Tensor({steps, frame.dim(1), frame.dim(2), frame.dim(3)});
        }
        std::copy(frame.data(), frame.data() + frame.size(), frames.data() + i * frame.size());
    }
    return frames;
}

} // namespace csc::eval
