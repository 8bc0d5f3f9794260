#include <doctest.h>

#include <cmath>
#include <limits>

#include "fad/elnet.hpp"
#include "fad/gradcheck.hpp"
#include "fad/ops.hpp"
#include "helpers.hpp"

using namespace fad;
using fad::test::randn;

namespace {

template <typename T>
struct Net {
    Schedule sched = make_schedule(100);
    nn::ParameterStore<T> store;
    std::mt19937_64 rng;
    ELNet<T> net;

    Net(const ELNetConfig& cfg, std::uint64_t seed) : rng(seed), net(cfg, sched, store, rng) {}
};

ELNetConfig tiny() {
    ELNetConfig c;
    c.base_width = 8;
    c.groups = 4;
    c.time_embed_dim = 8;
    c.blocks_per_stage = 1;
    c.cond_dim = 6;
    c.motion_dim = 5;
    return c;
}

// Randomizes every parameter so zero-initialized heads do not hide wiring.
template <typename T>
void scramble(nn::ParameterStore<T>& store, std::uint64_t seed, double scale = 0.3) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& v = store.at(i).value;
        v = randn<T>(v.shape(), seed + i, scale);
    }
}

std::size_t length_for(const std::string& name, std::size_t l, std::size_t depth) {
    auto stage = [&](std::size_t pos) { return static_cast<std::size_t>(name[pos] - '0'); };
    if (name.rfind("elnet.down", 0) == 0) {
        const std::size_t s = stage(10);
        return name.find("resample") != std::string::npos ? l >> (s + 1) : l >> s;
    }
    if (name.rfind("elnet.up", 0) == 0) return l >> stage(8);
    if (name.rfind("elnet.mid", 0) == 0) return l >> depth;
    return l;
}

} // namespace

TEST_SUITE("elnet") {

TEST_CASE("timestep embedding") {
    auto e0 = timestep_embedding<double>(0, 16);
    CHECK(e0.shape() == nn::Shape{16});
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(e0[i] == 0.0);
        CHECK(e0[8 + i] == 1.0);
    }
    double min_dist = std::numeric_limits<double>::infinity();
    std::vector<nn::Tensor<double>> all;
    for (std::size_t k = 1; k <= 100; ++k) all.push_back(timestep_embedding<double>(k, 128));
    for (std::size_t a = 0; a < all.size(); ++a) {
        for (std::size_t b = a + 1; b < all.size(); ++b) {
            double d = 0.0;
            for (std::size_t i = 0; i < 128; ++i) d = std::max(d, std::abs(all[a][i] - all[b][i]));
            min_dist = std::min(min_dist, d);
        }
    }
    CHECK(min_dist > 0.0);
    CHECK_THROWS(timestep_embedding<double>(3, 7));
}

TEST_CASE("denoise shape, determinism and zero head") {
    ELNetConfig cfg;
    cfg.prediction = Prediction::epsilon;
    Net<float> n(cfg, 1);
    auto xk = randn<float>({8, 56}, 2);
    auto m = randn<float>({8, 320}, 3);
    auto a = n.net.denoise(xk, 17, m);
    CHECK(a.shape() == nn::Shape{8, 56});
    CHECK(n.net.denoise(xk, 17, m) == a);
    n.net.final_weight().value.fill(0.0f);
    n.net.final_bias().value.fill(0.0f);
    for (std::uint64_t s = 0; s < 3; ++s) {
        auto z = n.net.denoise(randn<float>({8, 56}, 10 + s), 1 + 30 * s, randn<float>({8, 320}, 20 + s));
        for (float v : z.data()) CHECK(v == 0.0f);
    }
}

TEST_CASE("v prediction maps a zero head to the noise-only estimate") {
    Net<double> n(ELNetConfig{}, 4);
    n.net.final_weight().value.fill(0.0);
    n.net.final_bias().value.fill(0.0);
    auto xk = randn({8, 56}, 5);
    auto e = n.net.denoise(xk, 60, randn({8, 320}, 6));
    const double sn = std::sqrt(1.0 - n.sched.alpha_bar(60));
    for (std::size_t i = 0; i < xk.size(); ++i) CHECK(e[i] == doctest::Approx(sn * xk[i]).epsilon(1e-12));
}

TEST_CASE("denoise input validation") {
    Net<float> n(ELNetConfig{}, 7);
    CHECK_THROWS(n.net.denoise(randn<float>({8, 55}, 1), 3, randn<float>({8, 320}, 2)));
    CHECK_THROWS(n.net.denoise(randn<float>({8, 56}, 1), 3, randn<float>({4, 320}, 2)));
    CHECK_THROWS(n.net.denoise(randn<float>({8, 56}, 1), 0, randn<float>({8, 320}, 2)));
    CHECK_THROWS(n.net.denoise(randn<float>({8, 56}, 1), 101, randn<float>({8, 320}, 2)));
    ELNetConfig bad;
    bad.clip_len = 6;
    CHECK_THROWS(validate(bad));
    bad = ELNetConfig{};
    bad.base_width = 60;
    CHECK_THROWS(validate(bad));
}

TEST_CASE("full network gradient check") {
    for (auto pred : {Prediction::epsilon, Prediction::v}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            CAPTURE(seed);
            ELNetConfig cfg = tiny();
            cfg.prediction = pred;
            Net<double> n(cfg, seed);
            scramble(n.store, seed * 1000);
            auto xk = randn({2, 8, 5}, seed + 1);
            auto m = randn({2, 8, 6}, seed + 2);
            auto target = randn({2, 8, 5}, seed + 3);
            const std::vector<std::size_t> ks{1 + seed * 7, 90 - seed};
            auto f = [&](nn::Graph<double>& g) {
                return nn::mse(n.net.forward(g, g.constant(xk), ks, g.constant(m)), g.constant(target));
            };
            CHECK(nn::grad_check_params(f, n.store.pointers(), 1e-5, 6) < 1e-3);
            auto fx = [&](nn::Graph<double>& g, nn::Var<double> v) {
                return nn::mse(n.net.forward(g, v, ks, g.constant(m)), g.constant(target));
            };
            CHECK(nn::grad_check(fx, xk, 1e-5) < 1e-3);
            auto fm = [&](nn::Graph<double>& g, nn::Var<double> v) {
                return nn::mse(n.net.forward(g, g.constant(xk), ks, v), g.constant(target));
            };
            CHECK(nn::grad_check(fm, m, 1e-5) < 1e-3);
        }
    }
}

TEST_CASE("condition sensitivity and the zeroed condition pathway") {
    Net<double> n(ELNetConfig{}, 8);
    scramble(n.store, 99, 0.1);
    auto xk = randn({8, 56}, 9);
    auto m1 = randn({8, 320}, 10);
    auto m2 = randn({8, 320}, 11);
    auto a = n.net.denoise(xk, 30, m1);
    auto b = n.net.denoise(xk, 30, m2);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(diff > 1e-6);
    n.net.zero_condition_pathway();
    CHECK(n.net.denoise(xk, 30, m1) == n.net.denoise(xk, 30, m2));
}

TEST_CASE("skip connections are wired") {
    Net<double> n(ELNetConfig{}, 12);
    scramble(n.store, 7, 0.1);
    auto xk = randn({8, 56}, 13);
    auto m = randn({8, 320}, 14);
    auto with = n.net.denoise(xk, 50, m);
    n.net.set_use_skips(false);
    auto without = n.net.denoise(xk, 50, m);
    CHECK(!(with == without));
}

TEST_CASE("default config is lightweight") {
    Net<float> n(ELNetConfig{}, 15);
    CHECK(n.store.element_count() < 5000000);
    for (std::size_t i = 0; i < n.store.size(); ++i) CHECK(n.store.at(i).value.all_finite());
}

TEST_CASE("flop counting") {
    ELNetConfig cfg;
    VisualEncoderConfig vis;
    MelConfig mel;
    const auto one = count_flops(cfg, vis, mel, 1);
    const auto two = count_flops(cfg, vis, mel, 2);
    const auto ten = count_flops(cfg, vis, mel, 10);
    CHECK(two.total() - two.encoders() == 2.0 * (one.total() - one.encoders()));
    CHECK(ten.total() - ten.encoders() == 10.0 * one.denoiser_pass);
    CHECK(one.audio == 2.0 * 128 * 513 * 8);

    // Recount from the instantiated parameters: every rank-3 weight is a 1-D
    // conv run at its stage length, every rank-2 weight a dense layer.
    Net<float> n(cfg, 16);
    double denoiser = 0.0;
    for (std::size_t i = 0; i < n.store.size(); ++i) {
        const std::string& name = n.store.name(i);
        const auto& s = n.store.at(i).value.shape();
        if (name.size() < 7 || name.substr(name.size() - 7) != ".weight") continue;
        if (s.size() == 2) denoiser += 2.0 * s[0] * s[1];
        if (s.size() == 3) denoiser += 2.0 * s[0] * s[1] * s[2] * length_for(name, 8, cfg.depth);
    }
    CHECK(one.denoiser_pass == denoiser);

    // Visual encoder: run each layer on a dummy frame to read its output size.
    nn::ParameterStore<float> vs;
    std::mt19937_64 rng(17);
    VisualEncoder<float> enc(vis, vs, rng);
    nn::Graph<float> g(nn::GradMode::disabled);
    auto h = g.constant(nn::Tensor<float>({1, 1, 96, 96}));
    double visual = 0.0;
    for (std::size_t i = 0; i < vs.size(); i += 2) {
        const bool head = vs.name(i) == "visual.head.weight";
        h = nn::conv2d(h, g.param(vs.at(i)), g.param(vs.at(i + 1)), head ? 1 : 2, head ? 0 : 1);
        const auto& w = vs.at(i).value.shape();
        visual += 2.0 * w[0] * w[1] * w[2] * w[3] * h.dim(2) * h.dim(3);
    }
    CHECK(one.visual == 8.0 * visual);
}

}
