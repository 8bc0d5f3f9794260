#include <doctest.h>

#include <cmath>
#include <functional>

#include "fad/gradcheck.hpp"
#include "fad/ops.hpp"
#include "helpers.hpp"

using namespace fad;
using namespace fad::nn;
using fad::test::randn;

namespace {

using Fn = std::function<Var<double>(Graph<double>&, Var<double>)>;

// Reduces an op output to a scalar with fixed random weights so every output
// coordinate contributes a distinct gradient.
Var<double> project(Graph<double>& g, Var<double> y, std::uint64_t seed) {
    return sum(mul(y, g.constant(randn(y.shape(), seed ^ 0xABCD))));
}

// Moves values away from the ReLU kink so central differences stay valid.
Tensor<double> off_kink(Tensor<double> t) {
    for (auto& v : t.storage()) v += v >= 0 ? 0.05 : -0.05;
    return t;
}

Tensor<double> conv1d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b, std::size_t stride, std::size_t pad) {
    const std::size_t c = x.dim(0), len = x.dim(1), o = w.dim(0), k = w.dim(2);
    const std::size_t lo = (len + 2 * pad - k) / stride + 1;
    Tensor<double> y({o, lo});
    for (std::size_t oc = 0; oc < o; ++oc) {
        for (std::size_t t = 0; t < lo; ++t) {
            double acc = b[oc];
            for (std::size_t ic = 0; ic < c; ++ic) {
                for (std::size_t j = 0; j < k; ++j) {
                    const long pos = static_cast<long>(t * stride + j) - static_cast<long>(pad);
                    const double xv = pos >= 0 && pos < static_cast<long>(len) ? x(ic, pos) : 0.0;
                    acc += w(oc, ic, j) * xv;
                }
            }
            y(oc, t) = acc;
        }
    }
    return y;
}

Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b, std::size_t stride, std::size_t pad) {
    const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t o = w.dim(0), k = w.dim(2);
    const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    Tensor<double> y({o, ho, wo});
    for (std::size_t oc = 0; oc < o; ++oc) {
        for (std::size_t r = 0; r < ho; ++r) {
            for (std::size_t q = 0; q < wo; ++q) {
                double acc = b[oc];
                for (std::size_t ic = 0; ic < c; ++ic) {
                    for (std::size_t i = 0; i < k; ++i) {
                        for (std::size_t j = 0; j < k; ++j) {
                            const long ih = static_cast<long>(r * stride + i) - static_cast<long>(pad);
                            const long iw = static_cast<long>(q * stride + j) - static_cast<long>(pad);
                            const bool in = ih >= 0 && iw >= 0 && ih < static_cast<long>(h) &&
                                            iw < static_cast<long>(wd);
                            const double xv = in ? x[(ic * h + ih) * wd + iw] : 0.0;
                            acc += w[((oc * c + ic) * k + i) * k + j] * xv;
                        }
                    }
                }
                y[(oc * ho + r) * wo + q] = acc;
            }
        }
    }
    return y;
}

} // namespace

TEST_SUITE("numerics") {

TEST_CASE("conv1d identity kernel returns the input") {
    Graph<double> g;
    auto x = g.constant(Tensor<double>({1, 5}, {1, -2, 3, 0.5, 7}));
    auto y = conv1d(x, g.constant(Tensor<double>({1, 1, 1}, {1.0})),
                    g.constant(Tensor<double>({1})), 1, 0);
    CHECK(y.value() == x.value());
}

TEST_CASE("conv1d two-tap sum") {
    Graph<double> g;
    auto y = conv1d(g.constant(Tensor<double>({1, 3}, {1, 2, 3})),
                    g.constant(Tensor<double>({1, 1, 2}, {1, 1})),
                    g.constant(Tensor<double>({1})), 1, 0);
    CHECK(y.shape() == Shape{1, 2});
    CHECK(y.value()[0] == 3.0);
    CHECK(y.value()[1] == 5.0);
}

TEST_CASE("conv1d same padding keeps the length") {
    CHECK(detail::conv_out_len(8, 3, 1, 1) == 8);
    CHECK(detail::conv_out_len(8, 3, 2, 1) == 4);
    Graph<double> g;
    auto y = conv1d(g.constant(randn({4, 8}, 1)), g.constant(randn({6, 4, 3}, 2)),
                    g.constant(randn({6}, 3)), 1, 1);
    CHECK(y.shape() == Shape{6, 8});
}

TEST_CASE("conv2d identity and constant averaging") {
    Graph<double> g;
    auto img = randn({1, 5, 5}, 4);
    auto id = conv2d(g.constant(img), g.constant(Tensor<double>({1, 1, 1, 1}, {1.0})),
                     g.constant(Tensor<double>({1})), 1, 0);
    CHECK(id.value() == img);

    auto avg = conv2d(g.constant(Tensor<double>({1, 6, 6}, 2.5)),
                      g.constant(Tensor<double>({1, 1, 3, 3}, 1.0 / 9.0)),
                      g.constant(Tensor<double>({1})), 1, 1);
    for (std::size_t r = 1; r < 5; ++r) {
        for (std::size_t q = 1; q < 5; ++q) {
            CHECK(avg.value()[r * 6 + q] == doctest::Approx(2.5).epsilon(1e-15));
        }
    }
}

TEST_CASE("conv2d random 4x4 input with a 2x2 kernel matches the loop oracle") {
    auto x = randn({1, 4, 4}, 5);
    Tensor<double> w({1, 1, 2, 2}, {0.5, -1.0, 2.0, 0.25});
    Tensor<double> b({1}, {0.125});
    Graph<double> g;
    auto y = conv2d(g.constant(x), g.constant(w), g.constant(b), 1, 0);
    CHECK(y.value() == conv2d_oracle(x, w, b, 1, 0));
}

TEST_CASE("convolutions agree bit-for-bit with explicit loops") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t c = 1 + seed % 4, o = 1 + (seed / 2) % 4;
        const std::size_t k = 1 + seed % 3, stride = 1 + seed % 2, pad = seed % 2;
        const std::size_t len = 4 + seed % 13;
        CAPTURE(seed);
        auto x = randn({c, len}, seed);
        auto w = randn({o, c, k}, seed + 100);
        auto b = randn({o}, seed + 200);
        Graph<double> g;
        auto y = conv1d(g.constant(x), g.constant(w), g.constant(b), stride, pad);
        CHECK(y.value() == conv1d_oracle(x, w, b, stride, pad));

        const std::size_t side = 4 + seed % 5;
        auto x2 = randn({c, side, side}, seed + 300);
        auto w2 = randn({o, c, k, k}, seed + 400);
        auto y2 = conv2d(g.constant(x2), g.constant(w2), g.constant(b), stride, pad);
        CHECK(y2.value() == conv2d_oracle(x2, w2, b, stride, pad));
    }
}

TEST_CASE("batched convolution equals per-item convolution") {
    auto x = randn({5, 3, 16}, 7);
    auto w = randn({4, 3, 3}, 8);
    auto b = randn({4}, 9);
    Graph<double> g;
    auto y = conv1d(g.constant(x), g.constant(w), g.constant(b), 2, 1);
    const std::size_t lo = y.dim(2);
    for (std::size_t n = 0; n < 5; ++n) {
        Tensor<double> item({3, 16});
        std::copy_n(x.ptr() + n * 48, 48, item.ptr());
        auto ref = conv1d_oracle(item, w, b, 2, 1);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.value()[n * 4 * lo + i] == ref[i]);
    }
}

TEST_CASE("conv shape errors") {
    Graph<double> g;
    CHECK_THROWS(conv1d(g.constant(randn({3, 8}, 1)), g.constant(randn({2, 4, 3}, 2)),
                        g.constant(randn({2}, 3)), 1, 0));
    CHECK_THROWS(conv1d(g.constant(randn({3, 2}, 1)), g.constant(randn({2, 3, 5}, 2)),
                        g.constant(randn({2}, 3)), 1, 0));
    CHECK_THROWS(conv1d(g.constant(randn({3, 8}, 1)), g.constant(randn({2, 3, 3}, 2)),
                        g.constant(randn({3}, 3)), 1, 0));
    CHECK_THROWS(conv1d(g.constant(randn({3, 8}, 1)), g.constant(randn({2, 3, 3}, 2)),
                        g.constant(randn({2}, 3)), 0, 0));
}

TEST_CASE("group_norm examples") {
    Graph<double> g;
    auto ones = g.constant(Tensor<double>({8}, 1.0));
    auto zeros = g.constant(Tensor<double>({8}));
    auto c = group_norm(g.constant(Tensor<double>({8, 5}, 3.0)), 4, ones, zeros);
    for (double v : c.value().data()) CHECK(v == 0.0);

    auto beta = randn({8}, 11);
    auto z = group_norm(g.constant(randn({8, 5}, 12)), 4, zeros, g.constant(beta));
    for (std::size_t ch = 0; ch < 8; ++ch) {
        for (std::size_t t = 0; t < 5; ++t) CHECK(z.value()(ch, t) == beta[ch]);
    }

    auto x = randn({8, 16}, 13, 3.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += 2.0;
    auto y = group_norm(g.constant(x), 4, g.constant(Tensor<double>({8}, 1.0)), zeros);
    for (std::size_t grp = 0; grp < 4; ++grp) {
        double mu = 0.0, var = 0.0;
        for (std::size_t i = 0; i < 32; ++i) mu += y.value()[grp * 32 + i];
        mu /= 32.0;
        for (std::size_t i = 0; i < 32; ++i) {
            const double d = y.value()[grp * 32 + i] - mu;
            var += d * d;
        }
        var /= 32.0;
        CHECK(std::abs(mu) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
    CHECK_THROWS(group_norm(g.constant(randn({6, 4}, 1)), 4, g.constant(Tensor<double>({6}, 1.0)),
                            g.constant(Tensor<double>({6}))));
}

TEST_CASE("softmax, mse and elementwise examples") {
    Graph<double> g;
    auto s = softmax(g.constant(Tensor<double>({7}, 0.3)), 0);
    for (double v : s.value().data()) CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-15));

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto p = softmax(g.constant(randn({3, 6, 4}, seed, 5.0)), 1);
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t c = 0; c < 4; ++c) {
                double total = 0.0;
                for (std::size_t i = 0; i < 6; ++i) {
                    const double v = p.value()[(a * 6 + i) * 4 + c];
                    CHECK(v >= 0.0);
                    total += v;
                }
                CHECK(std::abs(total - 1.0) < 1e-6);
            }
        }
    }
    CHECK_THROWS(softmax(g.constant(randn({3, 4}, 1)), 2));

    auto x = g.constant(randn({4, 3}, 2));
    CHECK(mse(x, x).value()[0] == 0.0);
    CHECK(mse(g.constant(Tensor<double>({2})), g.constant(Tensor<double>({2}, 1.0))).value()[0] == 1.0);
    CHECK_THROWS(mse(x, g.constant(randn({3, 4}, 3))));
    CHECK_THROWS(add(x, g.constant(randn({4, 4}, 3))));

    auto up = upsample_nearest1d(g.constant(Tensor<double>({1, 3}, {1, 2, 3})));
    CHECK(up.value() == Tensor<double>({1, 6}, {1, 1, 2, 2, 3, 3}));
    auto cat = concat(g.constant(Tensor<double>({1, 2}, {1, 2})),
                      g.constant(Tensor<double>({2, 2}, {3, 4, 5, 6})), 0);
    CHECK(cat.value() == Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6}));
    CHECK_THROWS(concat(g.constant(randn({1, 2}, 1)), g.constant(randn({1, 3}, 2)), 0));
    auto r = relu(g.constant(Tensor<double>({3}, {-1, 0, 2})));
    CHECK(r.value() == Tensor<double>({3}, {0, 0, 2}));
    auto si = silu(g.constant(Tensor<double>({1}, {1.0})));
    CHECK(si.value()[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
}

TEST_CASE("grad_check examples") {
    auto x = randn({6}, 21);
    CHECK(grad_check([](Graph<double>&, Var<double> v) { return sum(mul(v, v)); }, x) < 1e-8);
    CHECK(grad_check([](Graph<double>& g, Var<double>) {
              return g.constant(Tensor<double>::scalar(3.0));
          },
                     x) == 0.0);
    auto w = randn({8, 4, 3}, 22, 0.5);
    auto b = randn({8}, 23);
    auto composite = [&](Graph<double>& g, Var<double> v) {
        auto h = conv1d(v, g.constant(w), g.constant(b), 1, 1);
        h = group_norm(h, 4, g.constant(Tensor<double>({8}, 1.0)), g.constant(Tensor<double>({8})));
        return project(g, silu(h), 24);
    };
    CHECK(grad_check(composite, randn({4, 10}, 25)) < 1e-4);
    CHECK_THROWS(grad_check([](Graph<double>&, Var<double> v) { return sum(mul(v, v)); },
                            Tensor<double>({2}, {std::nan(""), 1.0})));
}

TEST_CASE("every differentiable op passes the finite-difference check over 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CAPTURE(seed);
        auto other = randn({3, 4}, seed + 1000);
        auto check = [&](const char* name, const Fn& f, const Tensor<double>& x) {
            CAPTURE(name);
            const double err = grad_check(
                [&](Graph<double>& g, Var<double> v) { return project(g, f(g, v), seed); }, x);
            CHECK(err < 1e-4);
        };
        auto x34 = randn({3, 4}, seed);

        check("add", [&](Graph<double>& g, Var<double> v) { return add(v, g.constant(other)); }, x34);
        check("sub", [&](Graph<double>& g, Var<double> v) { return sub(g.constant(other), v); }, x34);
        check("mul", [&](Graph<double>& g, Var<double> v) { return mul(v, g.constant(other)); }, x34);
        check("mul_self", [](Graph<double>&, Var<double> v) { return mul(v, v); }, x34);
        check("scale", [](Graph<double>&, Var<double> v) { return scale(v, -1.7); }, x34);
        check("scale_items", [](Graph<double>&, Var<double> v) {
            return scale_items(v, std::vector<double>{0.5, -2.0, 3.0});
        }, x34);
        check("relu", [](Graph<double>&, Var<double> v) { return relu(v); }, off_kink(x34));
        check("silu", [](Graph<double>&, Var<double> v) { return silu(v); }, x34);
        check("softmax0", [](Graph<double>&, Var<double> v) { return softmax(v, 0); }, x34);
        check("softmax1", [](Graph<double>&, Var<double> v) { return softmax(v, 1); }, x34);
        check("transpose", [](Graph<double>&, Var<double> v) { return transpose_last2(v); }, x34);
        check("reshape", [](Graph<double>&, Var<double> v) { return reshape(v, {2, 6}); }, x34);
        check("gather_rows", [](Graph<double>&, Var<double> v) {
            return gather_rows(v, std::vector<std::size_t>{2, 0, 2, 1});
        }, x34);
        check("concat0", [&](Graph<double>& g, Var<double> v) { return concat(v, g.constant(other), 0); }, x34);
        check("concat1", [&](Graph<double>& g, Var<double> v) { return concat(g.constant(other), v, 1); }, x34);
        check("sum", [](Graph<double>&, Var<double> v) { return sum(v); }, x34);
        check("mean", [](Graph<double>&, Var<double> v) { return mean(v); }, x34);
        check("mse_a", [&](Graph<double>& g, Var<double> v) { return mse(v, g.constant(other)); }, x34);
        check("mse_b", [&](Graph<double>& g, Var<double> v) { return mse(g.constant(other), v); }, x34);

        auto lw = randn({5, 4}, seed + 1);
        auto lb = randn({5}, seed + 2);
        check("linear_x", [&](Graph<double>& g, Var<double> v) {
            return linear(v, g.constant(lw), g.constant(lb));
        }, x34);
        check("linear_w", [&](Graph<double>& g, Var<double> v) {
            return linear(g.constant(x34), v, g.constant(lb));
        }, lw);
        check("linear_b", [&](Graph<double>& g, Var<double> v) {
            return linear(g.constant(x34), g.constant(lw), v);
        }, lb);

        auto seq = randn({2, 3, 5}, seed + 3);
        auto cb = randn({2, 3}, seed + 4);
        check("channel_bias_x", [&](Graph<double>& g, Var<double> v) {
            return add_channel_bias(v, g.constant(cb));
        }, seq);
        check("channel_bias_b", [&](Graph<double>& g, Var<double> v) {
            return add_channel_bias(g.constant(seq), v);
        }, cb);
        check("upsample", [](Graph<double>&, Var<double> v) { return upsample_nearest1d(v); }, seq);

        const std::size_t stride = 1 + seed % 2, pad = seed % 2, k = 2 + seed % 2;
        auto cw = randn({4, 3, k}, seed + 5);
        auto cbias = randn({4}, seed + 6);
        check("conv1d_x", [&](Graph<double>& g, Var<double> v) {
            return conv1d(v, g.constant(cw), g.constant(cbias), stride, pad);
        }, seq);
        check("conv1d_w", [&](Graph<double>& g, Var<double> v) {
            return conv1d(g.constant(seq), v, g.constant(cbias), stride, pad);
        }, cw);
        check("conv1d_b", [&](Graph<double>& g, Var<double> v) {
            return conv1d(g.constant(seq), g.constant(cw), v, stride, pad);
        }, cbias);

        auto img = randn({2, 2, 5, 5}, seed + 7);
        auto kw = randn({3, 2, k, k}, seed + 8);
        auto kb = randn({3}, seed + 9);
        check("conv2d_x", [&](Graph<double>& g, Var<double> v) {
            return conv2d(v, g.constant(kw), g.constant(kb), stride, pad);
        }, img);
        check("conv2d_w", [&](Graph<double>& g, Var<double> v) {
            return conv2d(g.constant(img), v, g.constant(kb), stride, pad);
        }, kw);
        check("conv2d_b", [&](Graph<double>& g, Var<double> v) {
            return conv2d(g.constant(img), g.constant(kw), v, stride, pad);
        }, kb);

        auto gx = randn({2, 4, 3}, seed + 10);
        auto gamma = randn({4}, seed + 11);
        auto beta = randn({4}, seed + 12);
        check("group_norm_x", [&](Graph<double>& g, Var<double> v) {
            return group_norm(v, 2, g.constant(gamma), g.constant(beta));
        }, gx);
        check("group_norm_gamma", [&](Graph<double>& g, Var<double> v) {
            return group_norm(g.constant(gx), 2, v, g.constant(beta));
        }, gamma);
        check("group_norm_beta", [&](Graph<double>& g, Var<double> v) {
            return group_norm(g.constant(gx), 2, g.constant(gamma), v);
        }, beta);

        check("spatial_softmax", [](Graph<double>&, Var<double> v) {
            return spatial_softmax(v, 0.7);
        }, randn({2, 3, 4, 4}, seed + 13));
    }
}

TEST_CASE("backprop twice without reset doubles parameter gradients") {
    Parameter<double> w(randn({4, 3}, 31));
    Parameter<double> b(randn({4}, 32));
    auto x = randn({5, 3}, 33);
    auto run = [&] {
        Graph<double> g;
        auto y = silu(linear(g.constant(x), g.param(w), g.param(b)));
        g.backward(project(g, y, 34));
    };
    w.zero_grad();
    b.zero_grad();
    run();
    const auto gw = w.grad, gb = b.grad;
    run();
    for (std::size_t i = 0; i < gw.size(); ++i) CHECK(w.grad[i] == 2.0 * gw[i]);
    for (std::size_t i = 0; i < gb.size(); ++i) CHECK(b.grad[i] == 2.0 * gb[i]);
    w.zero_grad();
    for (double v : w.grad.data()) CHECK(v == 0.0);
    CHECK(w.grad.shape() == w.value.shape());
}

TEST_CASE("float path tracks the double path") {
    auto x = randn({6, 8, 12}, 41);
    auto w = randn({16, 8, 3}, 42, 0.3);
    auto b = randn({16}, 43);
    Graph<double> gd;
    auto yd = conv1d(gd.constant(x), gd.constant(w), gd.constant(b), 1, 1);
    Graph<float> gf;
    auto yf = conv1d(gf.constant(x.cast<float>()), gf.constant(w.cast<float>()),
                     gf.constant(b.cast<float>()), 1, 1);
    for (std::size_t i = 0; i < yd.value().size(); ++i) {
        CHECK(std::abs(yf.value()[i] - yd.value()[i]) < 1e-4);
    }
}

}
