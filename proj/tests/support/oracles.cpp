#include "oracles.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <fstream>

namespace csc::oracle {

Tensor naive_conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom) {
    const std::int64_t n = input.dim(0), cin = geom.in_channels, h = input.dim(2),
                       w = input.dim(3);
    const std::int64_t cout = geom.out_channels, k = geom.kernel_size;
    const std::int64_t oh = geom.conv_output_size(h), ow = geom.conv_output_size(w);
    Tensor out({n, cout, oh, ow});
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t m = 0; m < cout; ++m)
            for (std::int64_t i = 0; i < oh; ++i)
                for (std::int64_t j = 0; j < ow; ++j) {
                    double acc = 0;
                    for (std::int64_t c = 0; c < cin; ++c)
                        for (std::int64_t p = 0; p < k; ++p)
                            for (std::int64_t q = 0; q < k; ++q) {
                                const std::int64_t si = i * geom.stride - geom.padding + p;
                                const std::int64_t sj = j * geom.stride - geom.padding + q;
                                if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
                                acc += static_cast<double>(input.at4(s, c, si, sj)) *
                                       static_cast<double>(
                                           kernel[((m * cin + c) * k + p) * k + q]);
                            }
                    out.at4(s, m, i, j) = static_cast<real_t>(acc);
                }
    return out;
}

Tensor naive_deconv2d(const Tensor& code, const Tensor& kernel, const ConvGeometry& geom) {
    const std::int64_t n = code.dim(0), cout = geom.out_channels, oh = code.dim(2),
                       ow = code.dim(3);
    const std::int64_t cin = geom.in_channels, k = geom.kernel_size;
    const std::int64_t h = geom.deconv_output_size(oh), w = geom.deconv_output_size(ow);
    Tensor out({n, cin, h, w});
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t m = 0; m < cout; ++m)
            for (std::int64_t i = 0; i < oh; ++i)
                for (std::int64_t j = 0; j < ow; ++j) {
                    const real_t zv = code.at4(s, m, i, j);
                    if (zv == 0) continue;
                    for (std::int64_t c = 0; c < cin; ++c)
                        for (std::int64_t p = 0; p < k; ++p)
                            for (std::int64_t q = 0; q < k; ++q) {
                                const std::int64_t di = i * geom.stride - geom.padding + p;
                                const std::int64_t dj = j * geom.stride - geom.padding + q;
                                if (di < 0 || di >= h || dj < 0 || dj >= w) continue;
                                out.at4(s, c, di, dj) +=
                                    zv * kernel[((m * cin + c) * k + p) * k + q];
                            }
                }
    return out;
}

std::vector<std::vector<double>> synthesis_matrix(const ConvDictionary& dict,
                                                  std::int64_t code_h, std::int64_t code_w) {
    const ConvGeometry& g = dict.geometry();
    const std::int64_t cols = g.out_channels * code_h * code_w;
    const std::int64_t h = g.deconv_output_size(code_h), w = g.deconv_output_size(code_w);
    const std::int64_t rows = g.in_channels * h * w;
    std::vector<std::vector<double>> mat(static_cast<std::size_t>(rows),
                                         std::vector<double>(static_cast<std::size_t>(cols), 0));
    for (std::int64_t col = 0; col < cols; ++col) {
        Tensor e({1, g.out_channels, code_h, code_w});
        e[col] = 1;
        const Tensor img = naive_deconv2d(e, dict.kernel()->value, g);
        for (std::int64_t row = 0; row < rows; ++row) {
            mat[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)] =
                static_cast<double>(img[row]);
        }
    }
    return mat;
}

LassoSolution lasso_coordinate_descent(const std::vector<std::vector<double>>& dense_dict,
                                       const std::vector<double>& x, double lambda, double tol,
                                       int max_sweeps) {
    const std::size_t rows = dense_dict.size();
    const std::size_t cols = rows ? dense_dict[0].size() : 0;
    LassoSolution sol;
    sol.z.assign(cols, 0.0);

    std::vector<double> col_sq(cols, 0.0);
    for (std::size_t j = 0; j < cols; ++j) {
        for (std::size_t i = 0; i < rows; ++i) col_sq[j] += dense_dict[i][j] * dense_dict[i][j];
    }
    std::vector<double> residual = x;  // x - D z, z = 0

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_move = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            if (col_sq[j] == 0) continue;
            double corr = 0;
            for (std::size_t i = 0; i < rows; ++i) corr += dense_dict[i][j] * residual[i];
            const double zj_old = sol.z[j];
            const double raw = zj_old + corr / col_sq[j];
            const double thr = lambda / col_sq[j];
            double zj = 0;
            if (raw > thr) zj = raw - thr;
            else if (raw < -thr) zj = raw + thr;
            const double delta = zj - zj_old;
            if (delta != 0) {
                for (std::size_t i = 0; i < rows; ++i) residual[i] -= delta * dense_dict[i][j];
                sol.z[j] = zj;
                max_move = std::max(max_move, std::abs(delta));
            }
        }
        sol.sweeps = sweep + 1;
        if (max_move < tol) break;
    }

    double fit = 0;
    for (double r : residual) fit += r * r;
    double l1 = 0;
    for (double v : sol.z) l1 += std::abs(v);
    sol.objective = lambda * l1 + 0.5 * fit;
    return sol;
}

double coding_rate_svd(const Tensor& z, double eps_sq) {
    const std::int64_t d = z.dim(0), n = z.dim(1);
    Eigen::MatrixXd m(d, n);
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < n; ++j) m(i, j) = static_cast<double>(z[i * n + j]);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const double c = static_cast<double>(d) / (static_cast<double>(n) * eps_sq);
    double rate = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i) {
        const double s = svd.singularValues()(i);
        rate += 0.5 * std::log(1.0 + c * s * s);
    }
    return rate;
}

double central_difference(const std::function<double()>& eval, real_t* slot, double h) {
    const real_t saved = *slot;
    *slot = saved + static_cast<real_t>(h);
    const double fp = eval();
    *slot = saved - static_cast<real_t>(h);
    const double fm = eval();
    *slot = saved;
    return (fp - fm) / (2 * h);
}

PpmImage read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw IoError(path + ": not a P6 file");
    auto next_int = [&in, &path]() {
        // Skips whitespace and '#' comment lines between header fields.
        while (true) {
            const int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        std::int64_t v = 0;
        if (!(in >> v)) throw IoError(path + ": bad header");
        return v;
    };
    PpmImage img;
    img.width = next_int();
    img.height = next_int();
    const std::int64_t maxval = next_int();
    if (maxval != 255) throw IoError(path + ": expected maxval 255");
    in.get();  // single whitespace byte after maxval
    img.rgb.resize(static_cast<std::size_t>(img.width * img.height * 3));
    if (!in.read(reinterpret_cast<char*>(img.rgb.data()),
                 static_cast<std::streamsize>(img.rgb.size()))) {
        throw IoError(path + ": truncated pixel data");
    }
    return img;
}

std::vector<double> scalar_adam_trace(double x0, const std::vector<double>& grads, double lr,
                                      double beta1, double beta2, double eps) {
    std::vector<double> xs;
    double x = x0, m = 0, v = 0;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        m = beta1 * m + (1 - beta1) * g;
        v = beta2 * v + (1 - beta2) * g * g;
        const double mhat = m / (1 - std::pow(beta1, static_cast<double>(t)));
        const double vhat = v / (1 - std::pow(beta2, static_cast<double>(t)));
        x -= lr * mhat / (std::sqrt(vhat) + eps);
        xs.push_back(x);
    }
    return xs;
}

} // namespace csc::oracle
