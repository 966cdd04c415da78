#include "csc/autodiff.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace csc::autodiff {

namespace {

using Mat = Eigen::Matrix<real_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

} // namespace

NodeId Graph::push(Tensor value, std::function<void(Graph&, NodeId)> backward) {
    nodes_.push_back(Node{std::move(value), std::move(backward)});
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check_exists(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw DimensionError("graph: unknown node id " + std::to_string(id));
    }
}

const Tensor& Graph::value(NodeId id) const {
    check_exists(id);
    return nodes_[static_cast<std::size_t>(id)].value;
}

Tensor Graph::grad(NodeId id) const {
    check_exists(id);
    if (static_cast<std::size_t>(id) < grads_.size() &&
        !grads_[static_cast<std::size_t>(id)].empty()) {
        return grads_[static_cast<std::size_t>(id)];
    }
    return Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape());
}

void Graph::accumulate(NodeId id, const Tensor& g) {
    Tensor& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.empty()) {
        slot = g;
    } else {
        for (std::int64_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
    }
}

void Graph::backward(NodeId root) {
    check_exists(root);
    if (value(root).size() != 1) {
        throw DimensionError("backward: root must be scalar, got shape " +
                             shape_to_string(value(root).shape()));
    }
    grads_.assign(nodes_.size(), Tensor{});
    grads_[static_cast<std::size_t>(root)] = Tensor::scalar(1);
    for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (grads_[static_cast<std::size_t>(i)].empty() || !n.backward) continue;
        n.backward(*this, static_cast<NodeId>(i));
    }
    for (auto& [param, id] : params_) {
        param->grad = grad(id);
    }
}

// ---- leaves ---------------------------------------------------------------------

NodeId Graph::constant(Tensor value) { return push(std::move(value), nullptr); }

NodeId Graph::parameter(const ParamPtr& p) {
    for (const auto& [existing, id] : params_) {
        if (existing == p) return id;
    }
    NodeId id = push(p->value, nullptr);
    params_.emplace_back(p, id);
    return id;
}

// ---- elementwise ----------------------------------------------------------------

NodeId Graph::add(NodeId a, NodeId b) {
    Tensor out = csc::add(value(a), value(b));
    return push(std::move(out), [a, b](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        g.accumulate(a, up);
        g.accumulate(b, up);
    });
}

NodeId Graph::sub(NodeId a, NodeId b) {
    Tensor out = csc::sub(value(a), value(b));
    return push(std::move(out), [a, b](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        g.accumulate(a, up);
        g.accumulate(b, csc::scale(up, -1));
    });
}

NodeId Graph::mul(NodeId a, NodeId b) {
    Tensor out = csc::mul(value(a), value(b));
    return push(std::move(out), [a, b](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        g.accumulate(a, csc::mul(up, g.value(b)));
        g.accumulate(b, csc::mul(up, g.value(a)));
    });
}

NodeId Graph::scale(NodeId a, real_t c) {
    Tensor out = csc::scale(value(a), c);
    return push(std::move(out), [a, c](Graph& g, NodeId self) {
        g.accumulate(a, csc::scale(g.grads_[static_cast<std::size_t>(self)], c));
    });
}

NodeId Graph::sum(NodeId a) {
    Tensor out = Tensor::scalar(csc::sum(value(a)));
    return push(std::move(out), [a](Graph& g, NodeId self) {
        const real_t up = g.grads_[static_cast<std::size_t>(self)][0];
        g.accumulate(a, Tensor::full(g.value(a).shape(), up));
    });
}

NodeId Graph::relu(NodeId a) {
    const Tensor& v = value(a);
    // Exact zeros (typically shrinkage outputs) stay on the kink under
    // perturbation and never flip branches, so they do not count.
    for (std::int64_t i = 0; i < v.size(); ++i)
        if (v[i] != 0)
            min_kink_gap_ = std::min(min_kink_gap_, static_cast<double>(std::abs(v[i])));
    Tensor out = csc::relu(v);
    return push(std::move(out), [a](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        const Tensor& v = g.value(a);
        Tensor dg(v.shape());
        for (std::int64_t i = 0; i < v.size(); ++i) dg[i] = v[i] > 0 ? up[i] : real_t(0);
        g.accumulate(a, dg);
    });
}

NodeId Graph::leaky_relu(NodeId a, real_t slope) {
    const Tensor& v = value(a);
    for (std::int64_t i = 0; i < v.size(); ++i)
        if (v[i] != 0)
            min_kink_gap_ = std::min(min_kink_gap_, static_cast<double>(std::abs(v[i])));
    Tensor out = csc::leaky_relu(v, slope);
    return push(std::move(out), [a, slope](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        const Tensor& v = g.value(a);
        Tensor dg(v.shape());
        for (std::int64_t i = 0; i < v.size(); ++i) dg[i] = v[i] > 0 ? up[i] : slope * up[i];
        g.accumulate(a, dg);
    });
}

NodeId Graph::tanh(NodeId a) {
    Tensor out = csc::tanh_map(value(a));
    return push(std::move(out), [a](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        const Tensor& y = g.value(self);
        Tensor dg(y.shape());
        for (std::int64_t i = 0; i < y.size(); ++i) dg[i] = up[i] * (1 - y[i] * y[i]);
        g.accumulate(a, dg);
    });
}

NodeId Graph::soft_threshold(NodeId a, real_t lambda) {
    const Tensor& v = value(a);
    for (std::int64_t i = 0; i < v.size(); ++i) {
        const double gap = static_cast<double>(std::abs(std::abs(v[i]) - lambda));
        if (gap != 0) min_kink_gap_ = std::min(min_kink_gap_, gap);
    }
    Tensor out = csc::soft_threshold(v, lambda);
    // Subgradient 0 at the kink: pass upstream only where |v| > lambda.
    return push(std::move(out), [a, lambda](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        const Tensor& v = g.value(a);
        Tensor dg(v.shape());
        for (std::int64_t i = 0; i < v.size(); ++i)
            dg[i] = std::abs(v[i]) > lambda ? up[i] : real_t(0);
        g.accumulate(a, dg);
    });
}

// ---- convolution -----------------------------------------------------------------

NodeId Graph::conv2d(NodeId input, NodeId kernel, const ConvGeometry& geom) {
    Tensor out = csc::conv2d(value(input), value(kernel), geom);
    return push(std::move(out), [input, kernel, geom](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        g.accumulate(input, csc::deconv2d(up, g.value(kernel), geom));
        g.accumulate(kernel, csc::conv2d_kernel_grad(g.value(input), up, geom));
    });
}

NodeId Graph::deconv2d(NodeId code, NodeId kernel, const ConvGeometry& geom) {
    Tensor out = csc::deconv2d(value(code), value(kernel), geom);
    return push(std::move(out), [code, kernel, geom](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        g.accumulate(code, csc::conv2d(up, g.value(kernel), geom));
        g.accumulate(kernel, csc::conv2d_kernel_grad(up, g.value(code), geom));
    });
}

// ---- batch norm -------------------------------------------------------------------

NodeId Graph::batch_norm_train(NodeId x, NodeId gamma, NodeId beta, BnRunning* stats) {
    const Tensor& v = value(x);
    if (v.rank() != 4) throw DimensionError("batch_norm_train: expected NCHW input");
    const std::int64_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    if (value(gamma).size() != c || value(beta).size() != c) {
        throw DimensionError("batch_norm_train: channel count mismatch");
    }
    const std::int64_t m = n * h * w;

    Tensor xhat(v.shape());
    Tensor invstd({c});
    Tensor out(v.shape());
    const Tensor& gm = value(gamma);
    const Tensor& bt = value(beta);
    for (std::int64_t ch = 0; ch < c; ++ch) {
        real_t s = 0, s2 = 0;
        for (std::int64_t si = 0; si < n; ++si)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) {
                    const real_t u = v.at4(si, ch, i, j);
                    s += u;
                    s2 += u * u;
                }
        const real_t mean = s / static_cast<real_t>(m);
        real_t var = s2 / static_cast<real_t>(m) - mean * mean;
        if (var < 0) var = 0;
        if (stats) {
            const real_t unbiased =
                m > 1 ? var * static_cast<real_t>(m) / static_cast<real_t>(m - 1) : var;
            stats->mean[ch] = (1 - stats->momentum) * stats->mean[ch] + stats->momentum * mean;
            stats->var[ch] = (1 - stats->momentum) * stats->var[ch] + stats->momentum * unbiased;
        }
        const real_t eps = stats ? stats->eps : real_t(1e-5);
        const real_t inv = real_t(1) / std::sqrt(var + eps);
        invstd[ch] = inv;
        for (std::int64_t si = 0; si < n; ++si)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) {
                    const real_t xh = (v.at4(si, ch, i, j) - mean) * inv;
                    xhat.at4(si, ch, i, j) = xh;
                    out.at4(si, ch, i, j) = gm[ch] * xh + bt[ch];
                }
    }

    return push(std::move(out),
                [x, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd), n, c, h, w,
                 m](Graph& g, NodeId self) {
                    const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
                    const Tensor& gm = g.value(gamma);
                    Tensor dgamma({c});
                    Tensor dbeta({c});
                    Tensor dx({n, c, h, w});
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        real_t sum_up = 0, sum_up_xhat = 0;
                        for (std::int64_t si = 0; si < n; ++si)
                            for (std::int64_t i = 0; i < h; ++i)
                                for (std::int64_t j = 0; j < w; ++j) {
                                    const real_t u =
                                        up.at4(si, ch, i, j);
                                    sum_up += u;
                                    sum_up_xhat += u * xhat.at4(si, ch, i, j);
                                }
                        dbeta[ch] = sum_up;
                        dgamma[ch] = sum_up_xhat;
                        const real_t k = gm[ch] * invstd[ch] / static_cast<real_t>(m);
                        for (std::int64_t si = 0; si < n; ++si)
                            for (std::int64_t i = 0; i < h; ++i)
                                for (std::int64_t j = 0; j < w; ++j) {
                                    const real_t u = up.at4(si, ch, i, j);
                                    dx.at4(si, ch, i, j) =
                                        k * (static_cast<real_t>(m) * u - sum_up -
                                             xhat.at4(si, ch, i, j) * sum_up_xhat);
                                }
                    }
                    g.accumulate(x, dx);
                    g.accumulate(gamma, dgamma);
                    g.accumulate(beta, dbeta);
                });
}

NodeId Graph::batch_norm_eval(NodeId x, NodeId gamma, NodeId beta, const BnRunning& stats) {
    const Tensor& v = value(x);
    if (v.rank() != 4) throw DimensionError("batch_norm_eval: expected NCHW input");
    const std::int64_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    if (value(gamma).size() != c || value(beta).size() != c || stats.mean.size() != c) {
        throw DimensionError("batch_norm_eval: channel count mismatch");
    }
    Tensor invstd({c});
    Tensor mean = stats.mean;
    for (std::int64_t ch = 0; ch < c; ++ch)
        invstd[ch] = real_t(1) / std::sqrt(stats.var[ch] + stats.eps);

    Tensor out(v.shape());
    const Tensor& gm = value(gamma);
    const Tensor& bt = value(beta);
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t si = 0; si < n; ++si)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    out.at4(si, ch, i, j) =
                        gm[ch] * (v.at4(si, ch, i, j) - mean[ch]) * invstd[ch] + bt[ch];

    return push(std::move(out), [x, gamma, beta, mean = std::move(mean),
                                 invstd = std::move(invstd), n, c, h, w](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        const Tensor& v = g.value(x);
        const Tensor& gm = g.value(gamma);
        Tensor dgamma({c});
        Tensor dbeta({c});
        Tensor dx({n, c, h, w});
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const real_t gi = gm[ch] * invstd[ch];
            for (std::int64_t si = 0; si < n; ++si)
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t j = 0; j < w; ++j) {
                        const real_t u = up.at4(si, ch, i, j);
                        dbeta[ch] += u;
                        dgamma[ch] += u * (v.at4(si, ch, i, j) - mean[ch]) * invstd[ch];
                        dx.at4(si, ch, i, j) = u * gi;
                    }
        }
        g.accumulate(x, dx);
        g.accumulate(gamma, dgamma);
        g.accumulate(beta, dbeta);
    });
}

// ---- shape / linear algebra ---------------------------------------------------------

NodeId Graph::reshape(NodeId a, std::vector<std::int64_t> shape) {
    Tensor out = value(a).reshaped(shape);
    return push(std::move(out), [a](Graph& g, NodeId self) {
        g.accumulate(a, g.grads_[static_cast<std::size_t>(self)].reshaped(g.value(a).shape()));
    });
}

NodeId Graph::transpose2d(NodeId a) {
    const Tensor& v = value(a);
    if (v.rank() != 2) throw DimensionError("transpose2d: expected a matrix");
    const std::int64_t r = v.dim(0), c = v.dim(1);
    Tensor out({c, r});
    ConstMatMap in(v.data(), r, c);
    MatMap om(out.data(), c, r);
    om = in.transpose();
    return push(std::move(out), [a, r, c](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        Tensor dg({r, c});
        ConstMatMap um(up.data(), c, r);
        MatMap dm(dg.data(), r, c);
        dm = um.transpose();
        g.accumulate(a, dg);
    });
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_to_string(va.shape()) +
                             " x " + shape_to_string(vb.shape()));
    }
    const std::int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    Tensor out({m, n});
    {
        ConstMatMap am(va.data(), m, k);
        ConstMatMap bm(vb.data(), k, n);
        MatMap om(out.data(), m, n);
        om.noalias() = am * bm;
    }
    return push(std::move(out), [a, b, m, k, n](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        ConstMatMap um(up.data(), m, n);
        ConstMatMap am(g.value(a).data(), m, k);
        ConstMatMap bm(g.value(b).data(), k, n);
        Tensor da({m, k});
        Tensor db({k, n});
        MatMap dam(da.data(), m, k);
        MatMap dbm(db.data(), k, n);
        dam.noalias() = um * bm.transpose();
        dbm.noalias() = am.transpose() * um;
        g.accumulate(a, da);
        g.accumulate(b, db);
    });
}

NodeId Graph::add_scaled_identity(NodeId s, real_t c) {
    const Tensor& v = value(s);
    if (v.rank() != 2 || v.dim(0) != v.dim(1)) {
        throw DimensionError("add_scaled_identity: expected a square matrix");
    }
    const std::int64_t d = v.dim(0);
    Tensor out = csc::scale(v, c);
    for (std::int64_t i = 0; i < d; ++i) out[i * d + i] += 1;
    return push(std::move(out), [s, c](Graph& g, NodeId self) {
        g.accumulate(s, csc::scale(g.grads_[static_cast<std::size_t>(self)], c));
    });
}

NodeId Graph::logdet_spd(NodeId s) {
    const Tensor& v = value(s);
    if (v.rank() != 2 || v.dim(0) != v.dim(1)) {
        throw DimensionError("logdet_spd: expected a square matrix");
    }
    const std::int64_t d = v.dim(0);
    Eigen::MatrixXd sm(d, d);
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            sm(i, j) = static_cast<double>(v[i * d + j]);
    Eigen::LLT<Eigen::MatrixXd> llt(sm);
    if (llt.info() != Eigen::Success) {
        throw NumericError("logdet_spd: Cholesky factorization failed");
    }
    double logdet = 0;
    for (std::int64_t i = 0; i < d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    return push(Tensor::scalar(static_cast<real_t>(logdet)), [s, d](Graph& g, NodeId self) {
        const real_t up = g.grads_[static_cast<std::size_t>(self)][0];
        const Tensor& v = g.value(s);
        Eigen::MatrixXd sm(d, d);
        for (std::int64_t i = 0; i < d; ++i)
            for (std::int64_t j = 0; j < d; ++j)
                sm(i, j) = static_cast<double>(v[i * d + j]);
        Eigen::MatrixXd inv = Eigen::LLT<Eigen::MatrixXd>(sm).solve(
            Eigen::MatrixXd::Identity(d, d));
        Tensor dg({d, d});
        for (std::int64_t i = 0; i < d; ++i)
            for (std::int64_t j = 0; j < d; ++j)
                dg[i * d + j] = up * static_cast<real_t>(inv(i, j));
        g.accumulate(s, dg);
    });
}

NodeId Graph::concat_cols(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(0) != vb.dim(0)) {
        throw DimensionError("concat_cols: row counts differ");
    }
    const std::int64_t d = va.dim(0), n1 = va.dim(1), n2 = vb.dim(1);
    Tensor out({d, n1 + n2});
    for (std::int64_t i = 0; i < d; ++i) {
        std::copy(va.data() + i * n1, va.data() + (i + 1) * n1, out.data() + i * (n1 + n2));
        std::copy(vb.data() + i * n2, vb.data() + (i + 1) * n2,
                  out.data() + i * (n1 + n2) + n1);
    }
    return push(std::move(out), [a, b, d, n1, n2](Graph& g, NodeId self) {
        const Tensor& up = g.grads_[static_cast<std::size_t>(self)];
        Tensor da({d, n1});
        Tensor db({d, n2});
        for (std::int64_t i = 0; i < d; ++i) {
            std::copy(up.data() + i * (n1 + n2), up.data() + i * (n1 + n2) + n1,
                      da.data() + i * n1);
            std::copy(up.data() + i * (n1 + n2) + n1, up.data() + (i + 1) * (n1 + n2),
                      db.data() + i * n2);
        }
        g.accumulate(a, da);
        g.accumulate(b, db);
    });
}

NodeId Graph::stop_gradient(NodeId a) {
    return push(value(a), nullptr);
}

} // namespace csc::autodiff
