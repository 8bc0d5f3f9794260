#include "fad/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fad {

ScheduleKind parse_schedule_kind(const std::string& s) {
    if (s == "squared_cosine") return ScheduleKind::squared_cosine;
    if (s == "linear") return ScheduleKind::linear;
    throw Error("unknown schedule kind '" + s + "'");
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "squared_cosine";
}

Schedule make_schedule(std::size_t K, ScheduleKind kind) {
    require(K >= 1, "schedule: K must be >= 1");
    Schedule s;
    s.K = K;
    s.kind = kind;
    s.betas.resize(K);
    if (kind == ScheduleKind::squared_cosine) {
        auto f = [K](double k) {
            const double c = std::cos((k / static_cast<double>(K) + kCosineOffset) /
                                      (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
            return c * c;
        };
        const double f0 = f(0.0);
        for (std::size_t k = 1; k <= K; ++k) {
            const double ab = f(static_cast<double>(k)) / f0;
            const double ab_prev = f(static_cast<double>(k - 1)) / f0;
            s.betas[k - 1] = std::min(1.0 - ab / ab_prev, kMaxBeta);
        }
    } else {
        const double lo = 1e-4, hi = 0.02;
        for (std::size_t k = 1; k <= K; ++k) {
            s.betas[k - 1] = K == 1 ? lo
                                    : lo + (hi - lo) * static_cast<double>(k - 1) /
                                               static_cast<double>(K - 1);
        }
    }
    s.alphas.resize(K);
    s.alpha_bars.resize(K);
    s.posterior_vars.resize(K);
    s.scales.resize(K);
    s.eps_coefs.resize(K);
    s.sigmas.resize(K);
    double ab = 1.0;
    for (std::size_t i = 0; i < K; ++i) {
        const double prev = ab;
        s.alphas[i] = 1.0 - s.betas[i];
        ab *= s.alphas[i];
        s.alpha_bars[i] = ab;
        s.posterior_vars[i] = s.betas[i] * (1.0 - prev) / (1.0 - ab);
        s.scales[i] = 1.0 / std::sqrt(s.alphas[i]);
        s.eps_coefs[i] = s.betas[i] / std::sqrt(1.0 - ab);
        s.sigmas[i] = std::sqrt(s.posterior_vars[i]);
    }
    return s;
}

namespace {

void check_step(std::size_t k, const Schedule& sched) {
    require(k >= 1 && k <= sched.K, "timestep " + std::to_string(k) + " outside 1.." +
                                        std::to_string(sched.K));
}

void check_same(const nn::Tensor<double>& a, const nn::Tensor<double>& b, const char* what) {
    require(a.shape() == b.shape(), std::string(what) + ": shape mismatch " +
                                        nn::shape_str(a.shape()) + " vs " +
                                        nn::shape_str(b.shape()));
}

} // namespace

nn::Tensor<double> q_sample(const nn::Tensor<double>& x0, std::size_t k,
                            const nn::Tensor<double>& eps, const Schedule& sched) {
    check_step(k, sched);
    check_same(x0, eps, "q_sample");
    const double a = std::sqrt(sched.alpha_bar(k));
    const double b = std::sqrt(1.0 - sched.alpha_bar(k));
    nn::Tensor<double> out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x0[i] + b * eps[i];
    }
    return out;
}

nn::Tensor<double> reverse_step(const nn::Tensor<double>& xk, std::size_t k,
                                const nn::Tensor<double>& eps_hat, const Schedule& sched,
                                const nn::Tensor<double>& noise) {
    check_step(k, sched);
    check_same(xk, eps_hat, "reverse_step");
    check_same(xk, noise, "reverse_step");
    const double sc = sched.scale(k), ec = sched.eps_coef(k), sg = sched.sigma(k);
    nn::Tensor<double> out(xk.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = sc * (xk[i] - ec * eps_hat[i]) + sg * noise[i];
    }
    return out;
}

nn::Tensor<double> respaced_step(const nn::Tensor<double>& xt, std::size_t t,
                                 std::size_t prev, const nn::Tensor<double>& eps_hat,
                                 const Schedule& sched, const nn::Tensor<double>& noise) {
    check_step(t, sched);
    require(prev < t, "respaced_step: prev must precede t");
    if (prev + 1 == t) {
        return reverse_step(xt, t, eps_hat, sched, noise);
    }
    check_same(xt, eps_hat, "respaced_step");
    check_same(xt, noise, "respaced_step");
    const double ab_t = sched.alpha_bar(t);
    const double ab_p = sched.alpha_bar(prev);
    const double alpha = ab_t / ab_p;
    const double beta = 1.0 - alpha;
    const double sc = 1.0 / std::sqrt(alpha);
    const double ec = beta / std::sqrt(1.0 - ab_t);
    const double sg = std::sqrt(beta * (1.0 - ab_p) / (1.0 - ab_t));
    nn::Tensor<double> out(xt.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = sc * (xt[i] - ec * eps_hat[i]) + sg * noise[i];
    }
    return out;
}

std::vector<std::size_t> respaced_timesteps(std::size_t K, std::size_t S) {
    require(K >= 1 && S >= 1 && S <= K, "sampler steps S must lie in 1..K");
    std::vector<std::size_t> ts(S);
    if (S == 1) {
        ts[0] = K;
        return ts;
    }
    for (std::size_t j = 0; j < S; ++j) {
        const double pos = 1.0 + static_cast<double>(K - 1) *
                                     static_cast<double>(S - 1 - j) /
                                     static_cast<double>(S - 1);
        ts[j] = static_cast<std::size_t>(std::llround(pos));
    }
    return ts;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32), 0x46414455u};
    return std::mt19937_64(seq);
}

nn::Tensor<double> standard_normal(nn::Shape shape, std::mt19937_64& rng) {
    nn::Tensor<double> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.storage()) v = dist(rng);
    return t;
}

nn::Tensor<double> sample(const DenoiserFn& denoiser, const nn::Tensor<double>& cond,
                          std::size_t motion_dim, std::size_t S, const Schedule& sched,
                          std::uint64_t seed, std::uint64_t first_stream) {
    require(S >= 1 && S <= sched.K, "sampler steps S=" + std::to_string(S) +
                                        " outside 1.." + std::to_string(sched.K));
    require(cond.rank() == 2 || cond.rank() == 3, "sample: cond must be [l,d] or [N,l,d]");
    const bool batched = cond.rank() == 3;
    const std::size_t n = batched ? cond.dim(0) : 1;
    const std::size_t l = cond.dim(batched ? 1 : 0);
    const nn::Tensor<double> cond3 =
        batched ? cond : cond.reshaped({1, l, cond.dim(1)});
    const std::size_t item = l * motion_dim;

    std::vector<std::mt19937_64> rngs;
    rngs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) rngs.push_back(stream_rng(seed, first_stream + i));
    auto draw = [&] {
        nn::Tensor<double> z({n, l, motion_dim});
        for (std::size_t i = 0; i < n; ++i) {
            nn::Tensor<double> zi = standard_normal({item}, rngs[i]);
            std::copy(zi.storage().begin(), zi.storage().end(), z.ptr() + i * item);
        }
        return z;
    };

    nn::Tensor<double> x = draw();
    const std::vector<std::size_t> ts = respaced_timesteps(sched.K, S);
    for (std::size_t j = 0; j < ts.size(); ++j) {
        const std::size_t t = ts[j];
        const std::size_t prev = j + 1 < ts.size() ? ts[j + 1] : 0;
        nn::Tensor<double> eps_hat = denoiser(x, t, cond3);
        require(eps_hat.shape() == x.shape(), "denoiser returned shape " +
                                                  nn::shape_str(eps_hat.shape()));
        // The final step is noiseless; skip the draw so streams stay aligned.
        nn::Tensor<double> noise = prev == 0 ? nn::Tensor<double>(x.shape()) : draw();
        x = respaced_step(x, t, prev, eps_hat, sched, noise);
    }
    return batched ? x : x.reshaped({l, motion_dim});
}

double training_loss(const DenoiserFn& denoiser, const nn::Tensor<double>& x0,
                     const nn::Tensor<double>& cond, std::size_t k,
                     const nn::Tensor<double>& eps, const Schedule& sched) {
    check_same(x0, eps, "training_loss");
    const bool batched = x0.rank() == 3;
    const nn::Tensor<double> xk = q_sample(x0, k, eps, sched);
    const nn::Tensor<double> pred =
        batched ? denoiser(xk, k, cond)
                : denoiser(xk.reshaped({1, x0.dim(0), x0.dim(1)}), k,
                           cond.reshaped({1, cond.dim(0), cond.dim(1)}))
                      .reshaped(x0.shape());
    check_same(pred, eps, "training_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps[i] - pred[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps.size());
}

} // namespace fad
