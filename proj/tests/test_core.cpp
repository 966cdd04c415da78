#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "csc/autodiff.hpp"
#include "csc/rng.hpp"
#include "csc/tensor.hpp"
#include "support/oracles.hpp"

using namespace csc;
using autodiff::Graph;
using autodiff::NodeId;
using autodiff::Parameter;

namespace {

/// Random geometry that tiles its input exactly (the conv output maps back
/// to the original extent under deconv), like every stacked layer does.
ConvGeometry random_geometry(Rng& rng, std::int64_t& h, std::int64_t& w) {
    for (;;) {
        ConvGeometry g;
        g.kernel_size = 1 + rng.below(4);
        g.stride = 1 + rng.below(3);
        g.padding = rng.below(3);
        g.in_channels = 1 + rng.below(4);
        g.out_channels = 1 + rng.below(5);
        const std::int64_t oh = 1 + rng.below(5);
        const std::int64_t ow = 1 + rng.below(5);
        h = g.deconv_output_size(oh);
        w = g.deconv_output_size(ow);
        if (h >= 1 && w >= 1 && g.conv_output_size(h) == oh && g.conv_output_size(w) == ow) {
            return g;
        }
    }
}

} // namespace

TEST_CASE("tensor shape bookkeeping and validation") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0}), DimensionError);
    CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
    CHECK(t.reshaped({6}).dim(0) == 6);

    Tensor bad({2}, {1.0, std::nan("")});
    CHECK_FALSE(bad.all_finite());
    CHECK_THROWS_AS(bad.ensure_finite("test"), NumericError);
}

TEST_CASE("elementwise arithmetic and reductions") {
    Tensor a({3}, {1, -2, 3});
    Tensor b({3}, {4, 5, -6});
    CHECK(add(a, b)[1] == 3);
    CHECK(sub(a, b)[2] == 9);
    CHECK(mul(a, b)[0] == 4);
    CHECK(scale(a, -2)[2] == -6);
    CHECK(sum(a) == 2);
    CHECK(dot(a, b) == -24);
    CHECK(l1_norm(a) == 6);
    CHECK(max_abs(b) == 6);
    CHECK(count_nonzero(Tensor({3}, {0, 2, 0})) == 1);
    CHECK_THROWS_AS(add(a, Tensor({2})), DimensionError);
}

TEST_CASE("activations match their definitions") {
    Tensor t({4}, {1.5, -0.3, -2, 3});
    const Tensor st = soft_threshold(t, 1.0);
    CHECK(st[0] == doctest::Approx(0.5));
    CHECK(soft_threshold(Tensor({1}, {-0.3}), 0.5)[0] == 0);
    CHECK(relu(t)[2] == 0);
    CHECK(relu(t)[3] == 3);
    CHECK(leaky_relu(t, 0.2)[2] == doctest::Approx(-0.4));
    CHECK(std::abs(tanh_map(Tensor({1}, {8.0}))[0]) < 1.0);
    CHECK(std::abs(tanh_map(Tensor({1}, {-8.0}))[0]) < 1.0);
    CHECK(tanh_map(Tensor({1}, {8.0}))[0] == doctest::Approx(1.0));
}

TEST_CASE("soft threshold is a contraction") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const real_t a = static_cast<real_t>(rng.uniform(-3, 3));
        const real_t b = static_cast<real_t>(rng.uniform(-3, 3));
        const real_t lam = static_cast<real_t>(rng.uniform(0, 2));
        const real_t sa = soft_threshold(Tensor({1}, {a}), lam)[0];
        const real_t sb = soft_threshold(Tensor({1}, {b}), lam)[0];
        CHECK(std::abs(sa - sb) <= std::abs(a - b) + 1e-15);
    }
}

TEST_CASE("conv2d places the flipped kernel at an impulse") {
    Tensor x({1, 1, 5, 5});
    x.at4(0, 0, 2, 2) = 1;
    Rng rng(3);
    Tensor k = rng.normal_tensor({1, 1, 3, 3});
    ConvGeometry g{3, 1, 1, 1, 1};
    Tensor out = conv2d(x, k, g);
    REQUIRE(out.shape() == std::vector<std::int64_t>{1, 1, 5, 5});
    for (std::int64_t i = 1; i <= 3; ++i)
        for (std::int64_t j = 1; j <= 3; ++j)
            CHECK(out.at4(0, 0, i, j) ==
                  doctest::Approx(k[(3 - i) * 3 + (3 - j)]).epsilon(1e-14));
}

TEST_CASE("conv2d constant sums") {
    Tensor x = Tensor::full({1, 1, 4, 4}, 1);
    Tensor k = Tensor::full({1, 1, 2, 2}, 1);
    ConvGeometry g{2, 2, 0, 1, 1};
    Tensor out = conv2d(x, k, g);
    REQUIRE(out.shape() == std::vector<std::int64_t>{1, 1, 2, 2});
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(4.0));
}

TEST_CASE("deconv2d stamps the kernel at an impulse code") {
    Rng rng(11);
    Tensor k = rng.normal_tensor({1, 1, 3, 3});
    Tensor z({1, 1, 3, 3});
    z.at4(0, 0, 1, 1) = 1;
    ConvGeometry g{3, 1, 0, 1, 1};
    Tensor out = deconv2d(z, k, g);
    REQUIRE(out.shape() == std::vector<std::int64_t>{1, 1, 5, 5});
    for (std::int64_t p = 0; p < 3; ++p)
        for (std::int64_t q = 0; q < 3; ++q)
            CHECK(out.at4(0, 0, 1 + p, 1 + q) == doctest::Approx(k[p * 3 + q]));
}

TEST_CASE("stride-2 deconv of an impulse yields the cropped kernel") {
    Rng rng(12);
    Tensor k = rng.normal_tensor({1, 1, 4, 4});
    Tensor z({1, 1, 2, 2});
    z.at4(0, 0, 0, 0) = 1;
    ConvGeometry g{4, 2, 1, 1, 1};
    Tensor out = deconv2d(z, k, g);
    REQUIRE(out.shape() == std::vector<std::int64_t>{1, 1, 4, 4});
    Tensor expected = oracle::naive_deconv2d(z, k, g);
    for (std::int64_t i = 0; i < out.size(); ++i)
        CHECK(out[i] == doctest::Approx(expected[i]).epsilon(1e-14));
    // Top-left placement crops the first kernel row/column.
    CHECK(out.at4(0, 0, 0, 0) == doctest::Approx(k.at4(0, 0, 1, 1)));
}

TEST_CASE("conv and deconv match the nested-loop oracles on random draws") {
    Rng rng(2024);
    for (int trial = 0; trial < 120; ++trial) {
        std::int64_t h = 0, w = 0;
        ConvGeometry g = random_geometry(rng, h, w);
        const std::int64_t n = 1 + rng.below(3);
        Tensor x = rng.normal_tensor({n, g.in_channels, h, w});
        Tensor k = rng.normal_tensor({g.out_channels, g.in_channels, g.kernel_size,
                                      g.kernel_size});
        Tensor got = conv2d(x, k, g);
        Tensor want = oracle::naive_conv2d(x, k, g);
        REQUIRE(got.same_shape(want));
        for (std::int64_t i = 0; i < got.size(); ++i) {
            CHECK(std::abs(got[i] - want[i]) <= 1e-12 * std::max<real_t>(1, std::abs(want[i])));
        }

        Tensor z = rng.normal_tensor(got.shape());
        Tensor back = deconv2d(z, k, g);
        Tensor back_want = oracle::naive_deconv2d(z, k, g);
        for (std::int64_t i = 0; i < back.size(); ++i) {
            CHECK(std::abs(back[i] - back_want[i]) <=
                  1e-12 * std::max<real_t>(1, std::abs(back_want[i])));
        }
    }
}

TEST_CASE("adjoint identity holds across random shapes") {
    Rng rng(55);
    for (int trial = 0; trial < 100; ++trial) {
        std::int64_t h = 0, w = 0;
        ConvGeometry g = random_geometry(rng, h, w);
        const std::int64_t n = 1 + rng.below(2);
        Tensor x = rng.normal_tensor({n, g.in_channels, h, w});
        Tensor k = rng.normal_tensor({g.out_channels, g.in_channels, g.kernel_size,
                                      g.kernel_size});
        Tensor cx = conv2d(x, k, g);
        Tensor z = rng.normal_tensor(cx.shape());
        const real_t lhs = dot(cx, z);
        const real_t rhs = dot(x, deconv2d(z, k, g));
        CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max<real_t>(1, std::abs(lhs)));
    }
}

TEST_CASE("conv2d rejects bad inputs") {
    ConvGeometry g{3, 1, 0, 2, 1};
    Tensor k({1, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(Tensor({1, 3, 5, 5}), k, g), DimensionError);
    Tensor x({1, 2, 5, 5});
    x[0] = std::numeric_limits<real_t>::infinity();
    CHECK_THROWS_AS(conv2d(x, k, g), NumericError);
    CHECK_THROWS_AS(conv2d(Tensor({1, 2, 2, 2}), k, g), DimensionError);
}

TEST_CASE("threaded convolution is bit-identical to single-threaded") {
    Rng rng(77);
    ConvGeometry g{4, 2, 1, 3, 8};
    Tensor x = rng.normal_tensor({5, 3, 12, 12});
    Tensor k = rng.normal_tensor({8, 3, 4, 4});
    Tensor base = conv2d(x, k, g);
    set_num_threads(4);
    Tensor threaded = conv2d(x, k, g);
    set_num_threads(1);
    for (std::int64_t i = 0; i < base.size(); ++i) CHECK(base[i] == threaded[i]);
}

TEST_CASE("batch_norm train/eval semantics") {
    Rng rng(9);
    const std::int64_t c = 3;
    Tensor gamma = Tensor::full({c}, 1);
    Tensor beta({c}, {0.5, -1.0, 2.0});

    SUBCASE("constant input collapses to the shift") {
        BnRunning st = BnRunning::make(c);
        Tensor x = Tensor::full({4, c, 2, 2}, 7);
        Tensor y = batch_norm(x, gamma, beta, st, true);
        for (std::int64_t s = 0; s < 4; ++s)
            for (std::int64_t ch = 0; ch < c; ++ch)
                CHECK(y.at4(s, ch, 0, 0) == doctest::Approx(beta[ch]).epsilon(1e-9));
    }

    SUBCASE("normalized input passes through") {
        BnRunning st = BnRunning::make(c);
        // Construct per-channel mean 0, biased variance exactly 1.
        Tensor x({2, c, 1, 2});
        for (std::int64_t ch = 0; ch < c; ++ch) {
            x.at4(0, ch, 0, 0) = 1;
            x.at4(0, ch, 0, 1) = -1;
            x.at4(1, ch, 0, 0) = 1;
            x.at4(1, ch, 0, 1) = -1;
        }
        Tensor y = batch_norm(x, gamma, Tensor::zeros({c}), st, true);
        for (std::int64_t i = 0; i < y.size(); ++i)
            CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-4));
    }

    SUBCASE("train output is standardized") {
        BnRunning st = BnRunning::make(c);
        Tensor x = rng.normal_tensor({8, c, 4, 4}, 3.0, 2.5);
        Tensor y = batch_norm(x, gamma, Tensor::zeros({c}), st, true);
        const std::int64_t m = 8 * 4 * 4;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            real_t mean = 0, var = 0;
            for (std::int64_t s = 0; s < 8; ++s)
                for (std::int64_t i = 0; i < 4; ++i)
                    for (std::int64_t j = 0; j < 4; ++j) mean += y.at4(s, ch, i, j);
            mean /= m;
            for (std::int64_t s = 0; s < 8; ++s)
                for (std::int64_t i = 0; i < 4; ++i)
                    for (std::int64_t j = 0; j < 4; ++j) {
                        const real_t d = y.at4(s, ch, i, j) - mean;
                        var += d * d;
                    }
            var /= m;
            CHECK(std::abs(mean) <= 1e-10);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
        }
    }

    SUBCASE("eval is deterministic given fixed running stats") {
        BnRunning st = BnRunning::make(c);
        st.mean = Tensor({c}, {0.2, -0.1, 0.4});
        st.var = Tensor({c}, {1.5, 0.7, 2.0});
        Tensor x = rng.normal_tensor({2, c, 3, 3});
        BnRunning st_copy = st;
        Tensor y1 = batch_norm(x, gamma, beta, st, false);
        Tensor y2 = batch_norm(x, gamma, beta, st_copy, false);
        for (std::int64_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
        // Eval mode must not touch the running statistics.
        for (std::int64_t ch = 0; ch < c; ++ch) CHECK(st.mean[ch] == st_copy.mean[ch]);
    }
}

// ---- autodiff ------------------------------------------------------------------

TEST_CASE("simple products differentiate correctly") {
    Graph g;
    auto x = std::make_shared<Parameter>("x", Tensor::scalar(3));
    NodeId xn = g.parameter(x);
    NodeId y = g.mul(xn, xn);
    g.backward(y);
    CHECK(x->grad[0] == doctest::Approx(6.0));

    Graph g2;
    NodeId xn2 = g2.parameter(x);
    NodeId y2 = g2.mul(xn2, g2.stop_gradient(xn2));
    g2.backward(y2);
    CHECK(x->grad[0] == doctest::Approx(3.0));
}

TEST_CASE("stop_gradient on a constant is a no-op forward") {
    Graph g;
    NodeId c = g.constant(Tensor({2}, {1, 2}));
    NodeId s = g.stop_gradient(c);
    CHECK(g.value(s)[0] == 1);
    CHECK(g.value(s)[1] == 2);
}

TEST_CASE("parameter registration deduplicates") {
    Graph g;
    auto p = std::make_shared<Parameter>("p", Tensor::scalar(2));
    CHECK(g.parameter(p) == g.parameter(p));
}

TEST_CASE("unreached parameters receive zero gradients") {
    Graph g;
    auto used = std::make_shared<Parameter>("used", Tensor::scalar(2));
    auto unused = std::make_shared<Parameter>("unused", Tensor::scalar(5));
    unused->grad[0] = 123;  // stale
    NodeId a = g.parameter(used);
    g.parameter(unused);
    g.backward(g.mul(a, a));
    CHECK(used->grad[0] == doctest::Approx(4.0));
    CHECK(unused->grad[0] == 0.0);
}

TEST_CASE("backward requires a scalar root") {
    Graph g;
    NodeId v = g.constant(Tensor({3}));
    CHECK_THROWS_AS(g.backward(v), DimensionError);
}

TEST_CASE("backward is deterministic") {
    Rng rng(4);
    Tensor xv = rng.normal_tensor({2, 3, 6, 6});
    Tensor kv = rng.normal_tensor({4, 3, 3, 3});
    ConvGeometry geom{3, 2, 1, 3, 4};
    auto run = [&]() {
        Graph g;
        auto k = std::make_shared<Parameter>("k", kv);
        NodeId out = g.conv2d(g.constant(xv), g.parameter(k), geom);
        g.backward(g.sum(out));
        return k->grad;
    };
    Tensor g1 = run();
    Tensor g2 = run();
    for (std::int64_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

namespace {

/// Relative-error finite-difference check of d(eval)/d(param) for every
/// coordinate of `param` (or a sampled subset).
void check_gradient(const std::function<double()>& eval,
                    const std::function<Tensor()>& analytic, Parameter& param, double tol,
                    double h = 1e-6, int max_coords = -1) {
    const Tensor grad = analytic();
    std::int64_t n = param.value.size();
    Rng pick(99);
    std::vector<std::int64_t> coords;
    if (max_coords > 0 && n > max_coords) {
        for (int i = 0; i < max_coords; ++i) coords.push_back(pick.below(n));
    } else {
        for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    }
    for (std::int64_t i : coords) {
        const double scale_h = h * std::max(1.0, std::abs(static_cast<double>(param.value[i])));
        const double fd = oracle::central_difference(eval, &param.value[i], scale_h);
        const double ad = static_cast<double>(grad[i]);
        const double denom = std::max({std::abs(fd), std::abs(ad), 1.0});
        CHECK(std::abs(fd - ad) / denom <= tol);
    }
}

} // namespace

TEST_CASE("every primitive matches central finite differences") {
    Rng rng(2718);
    for (int draw = 0; draw < 20; ++draw) {
        auto p = std::make_shared<Parameter>("p", rng.normal_tensor({2, 3, 5, 5}));
        auto k = std::make_shared<Parameter>("k", rng.normal_tensor({4, 3, 3, 3}));
        ConvGeometry geom{3, 2, 1, 3, 4};
        const Tensor probe = rng.normal_tensor({2, 3, 5, 5});

        SUBCASE("") {}  // keep each draw independent under doctest

        // add/sub/mul/scale/sum as one composite expression.
        {
            auto eval = [&]() {
                Graph g;
                NodeId a = g.parameter(p);
                NodeId b = g.constant(probe);
                NodeId e = g.add(g.mul(a, b), g.scale(g.sub(a, b), 0.7));
                return static_cast<double>(g.value(g.sum(e))[0]);
            };
            auto analytic = [&]() {
                Graph g;
                NodeId a = g.parameter(p);
                NodeId b = g.constant(probe);
                NodeId e = g.add(g.mul(a, b), g.scale(g.sub(a, b), 0.7));
                g.backward(g.sum(e));
                return p->grad;
            };
            check_gradient(eval, analytic, *p, 1e-7, 1e-6, 12);
        }

        // tanh through a weighted sum.
        {
            auto eval = [&]() {
                Graph g;
                NodeId a = g.parameter(p);
                NodeId e = g.mul(g.tanh(a), g.constant(probe));
                return static_cast<double>(g.value(g.sum(e))[0]);
            };
            auto analytic = [&]() {
                Graph g;
                NodeId a = g.parameter(p);
                NodeId e = g.mul(g.tanh(a), g.constant(probe));
                g.backward(g.sum(e));
                return p->grad;
            };
            check_gradient(eval, analytic, *p, 1e-6, 1e-6, 12);
        }

        // conv2d kernel gradient.
        {
            auto eval = [&]() {
                Graph g;
                NodeId out = g.conv2d(g.constant(probe), g.parameter(k), geom);
                NodeId weighted = g.mul(out, g.constant(Tensor::full(g.value(out).shape(), 0.5)));
                return static_cast<double>(g.value(g.sum(weighted))[0]);
            };
            auto analytic = [&]() {
                Graph g;
                NodeId out = g.conv2d(g.constant(probe), g.parameter(k), geom);
                NodeId weighted = g.mul(out, g.constant(Tensor::full(g.value(out).shape(), 0.5)));
                g.backward(g.sum(weighted));
                return k->grad;
            };
            check_gradient(eval, analytic, *k, 1e-6, 1e-6, 12);
        }

        // deconv2d input and kernel gradients.
        {
            auto code = std::make_shared<Parameter>("z", rng.normal_tensor({2, 4, 3, 3}));
            auto eval = [&]() {
                Graph g;
                NodeId out = g.deconv2d(g.parameter(code), g.parameter(k), geom);
                return static_cast<double>(g.value(g.sum(out))[0]);
            };
            auto analytic_z = [&]() {
                Graph g;
                NodeId out = g.deconv2d(g.parameter(code), g.parameter(k), geom);
                g.backward(g.sum(out));
                return code->grad;
            };
            check_gradient(eval, analytic_z, *code, 1e-6, 1e-6, 10);
            auto analytic_k = [&]() {
                Graph g;
                NodeId out = g.deconv2d(g.parameter(code), g.parameter(k), geom);
                g.backward(g.sum(out));
                return k->grad;
            };
            check_gradient(eval, analytic_k, *k, 1e-6, 1e-6, 10);
        }
    }
}

TEST_CASE("kinked primitives differentiate away from their kinks") {
    Rng rng(31337);
    for (int draw = 0; draw < 20; ++draw) {
        Tensor init = rng.normal_tensor({2, 4, 4, 4});
        // Keep a safe margin from the kinks of relu and soft_threshold(0.3).
        for (std::int64_t i = 0; i < init.size(); ++i) {
            if (std::abs(std::abs(init[i]) - 0.3) < 5e-3 || std::abs(init[i]) < 5e-3) {
                init[i] += 0.1;
            }
        }
        auto p = std::make_shared<Parameter>("p", init);
        const Tensor weights = rng.normal_tensor(init.shape());
        auto build = [&](Graph& g) {
            NodeId a = g.parameter(p);
            NodeId e = g.add(g.relu(a), g.leaky_relu(g.soft_threshold(a, 0.3), 0.2));
            return g.sum(g.mul(e, g.constant(weights)));
        };
        auto eval = [&]() {
            Graph g;
            return static_cast<double>(g.value(build(g))[0]);
        };
        auto analytic = [&]() {
            Graph g;
            NodeId root = build(g);
            CHECK(g.min_kink_gap() > 1e-3);
            g.backward(root);
            return p->grad;
        };
        check_gradient(eval, analytic, *p, 1e-6, 1e-7, 16);
    }
}

TEST_CASE("soft threshold backward gates by the shrinkage mask") {
    Graph g;
    auto p = std::make_shared<Parameter>("p", Tensor({3}, {2.0, 0.2, -1.5}));
    NodeId out = g.soft_threshold(g.parameter(p), 1.0);
    g.backward(g.sum(out));
    CHECK(p->grad[0] == 1.0);
    CHECK(p->grad[1] == 0.0);
    CHECK(p->grad[2] == 1.0);
}

TEST_CASE("matrix operations differentiate correctly") {
    Rng rng(404);
    auto a = std::make_shared<Parameter>("a", rng.normal_tensor({3, 4}));
    auto b = std::make_shared<Parameter>("b", rng.normal_tensor({4, 2}));
    const Tensor mixer = rng.normal_tensor({4, 4});
    auto build = [&](Graph& g) {
        NodeId prod = g.matmul(g.parameter(a), g.parameter(b));  // [3,2]
        NodeId mixed = g.transpose2d(g.matmul(g.constant(mixer), g.transpose2d(g.parameter(a))));
        NodeId both = g.concat_cols(prod, mixed);  // [3,6]
        return g.sum(g.mul(both, g.constant(Tensor::full({3, 6}, 0.25))));
    };
    auto eval = [&]() {
        Graph g;
        return static_cast<double>(g.value(build(g))[0]);
    };
    auto analytic_a = [&]() {
        Graph g;
        g.backward(build(g));
        return a->grad;
    };
    check_gradient(eval, analytic_a, *a, 1e-7);
    auto analytic_b = [&]() {
        Graph g;
        g.backward(build(g));
        return b->grad;
    };
    check_gradient(eval, analytic_b, *b, 1e-7);
}

TEST_CASE("logdet of an SPD matrix matches finite differences") {
    Rng rng(606);
    // S = B B^T + 4I stays SPD under small perturbations of B.
    auto b = std::make_shared<Parameter>("b", rng.normal_tensor({4, 4}));
    auto build = [&](Graph& g) {
        NodeId bn = g.parameter(b);
        NodeId s = g.add_scaled_identity(g.matmul(bn, g.transpose2d(bn)), 0.25);
        return g.logdet_spd(s);
    };
    auto eval = [&]() {
        Graph g;
        return static_cast<double>(g.value(build(g))[0]);
    };
    auto analytic = [&]() {
        Graph g;
        g.backward(build(g));
        return b->grad;
    };
    check_gradient(eval, analytic, *b, 1e-6);
}

TEST_CASE("batch norm train backward matches finite differences") {
    Rng rng(808);
    auto x = std::make_shared<Parameter>("x", rng.normal_tensor({3, 2, 4, 4}));
    auto gamma = std::make_shared<Parameter>("g", Tensor({2}, {1.2, 0.8}));
    auto beta = std::make_shared<Parameter>("b", Tensor({2}, {0.1, -0.2}));
    const Tensor weights = rng.normal_tensor({3, 2, 4, 4});
    BnRunning stats = BnRunning::make(2);
    auto build = [&](Graph& g) {
        NodeId y = g.batch_norm_train(g.parameter(x), g.parameter(gamma), g.parameter(beta),
                                      &stats);
        return g.sum(g.mul(y, g.constant(weights)));
    };
    auto eval = [&]() {
        Graph g;
        return static_cast<double>(g.value(build(g))[0]);
    };
    for (auto* p : {x.get(), gamma.get(), beta.get()}) {
        auto analytic = [&]() {
            Graph g;
            g.backward(build(g));
            return p->grad;
        };
        check_gradient(eval, analytic, *p, 2e-6, 1e-6, 20);
    }
}

TEST_CASE("batch norm eval backward matches finite differences") {
    Rng rng(909);
    auto x = std::make_shared<Parameter>("x", rng.normal_tensor({2, 2, 3, 3}));
    auto gamma = std::make_shared<Parameter>("g", Tensor({2}, {1.1, 0.9}));
    auto beta = std::make_shared<Parameter>("b", Tensor({2}, {0.3, -0.1}));
    BnRunning stats = BnRunning::make(2);
    stats.mean = Tensor({2}, {0.2, -0.4});
    stats.var = Tensor({2}, {1.4, 0.6});
    const Tensor weights = rng.normal_tensor({2, 2, 3, 3});
    auto build = [&](Graph& g) {
        NodeId y = g.batch_norm_eval(g.parameter(x), g.parameter(gamma), g.parameter(beta),
                                     stats);
        return g.sum(g.mul(y, g.constant(weights)));
    };
    auto eval = [&]() {
        Graph g;
        return static_cast<double>(g.value(build(g))[0]);
    };
    for (auto* p : {x.get(), gamma.get(), beta.get()}) {
        auto analytic = [&]() {
            Graph g;
            g.backward(build(g));
            return p->grad;
        };
        check_gradient(eval, analytic, *p, 1e-6);
    }
}
