#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fad/tensor.hpp"

namespace fad {

enum class ScheduleKind { squared_cosine, linear };

ScheduleKind parse_schedule_kind(const std::string& s);
std::string to_string(ScheduleKind k);

// Noise schedule over steps k = 1..K. Per-step arrays are stored at index
// k - 1; alpha_bar(0) is defined as 1.
struct Schedule {
    std::size_t K = 0;
    ScheduleKind kind = ScheduleKind::squared_cosine;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    std::vector<double> posterior_vars;
    // Reverse-step coefficients: x_{k-1} = scale * (x_k - eps_coef * eps) + sigma * z
    std::vector<double> scales;
    std::vector<double> eps_coefs;
    std::vector<double> sigmas;

    double beta(std::size_t k) const { return betas.at(k - 1); }
    double alpha(std::size_t k) const { return alphas.at(k - 1); }
    double alpha_bar(std::size_t k) const { return k == 0 ? 1.0 : alpha_bars.at(k - 1); }
    double posterior_var(std::size_t k) const { return posterior_vars.at(k - 1); }
    double scale(std::size_t k) const { return scales.at(k - 1); }
    double eps_coef(std::size_t k) const { return eps_coefs.at(k - 1); }
    double sigma(std::size_t k) const { return sigmas.at(k - 1); }
};

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

Schedule make_schedule(std::size_t K, ScheduleKind kind = ScheduleKind::squared_cosine);

// Closed-form forward marginal: sqrt(abar_k) x0 + sqrt(1 - abar_k) eps.
// Accepts [l, D] or batched [N, l, D] tensors (one k for all items).
nn::Tensor<double> q_sample(const nn::Tensor<double>& x0, std::size_t k,
                            const nn::Tensor<double>& eps, const Schedule& sched);

// One ancestral step x_k -> x_{k-1}.
nn::Tensor<double> reverse_step(const nn::Tensor<double>& xk, std::size_t k,
                                const nn::Tensor<double>& eps_hat, const Schedule& sched,
                                const nn::Tensor<double>& noise);

// Reverse step between arbitrary timesteps t > prev of a respaced chain
// (prev = 0 lands on the clean sample). Identical to reverse_step when
// prev == t - 1.
nn::Tensor<double> respaced_step(const nn::Tensor<double>& xt, std::size_t t,
                                 std::size_t prev, const nn::Tensor<double>& eps_hat,
                                 const Schedule& sched, const nn::Tensor<double>& noise);

// S evenly strided timesteps from K down to 1 (S = 1 yields {K}).
std::vector<std::size_t> respaced_timesteps(std::size_t K, std::size_t S);

// eps_theta(x_k, k, M): x_k [N, l, D] and cond [N, l, d_m] -> eps_hat [N, l, D].
using DenoiserFn = std::function<nn::Tensor<double>(
    const nn::Tensor<double>& xk, std::size_t k, const nn::Tensor<double>& cond)>;

// Per-item Gaussian stream derived from (seed, stream id).
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream);
nn::Tensor<double> standard_normal(nn::Shape shape, std::mt19937_64& rng);

// Ancestral sampling with S respaced steps. `cond` is [l, d_m] or [N, l, d_m];
// item n draws all of its noise from stream_rng(seed, first_stream + n), so a
// clip sampled alone matches the same clip sampled inside a batch. The
// denoiser is invoked exactly S times.
nn::Tensor<double> sample(const DenoiserFn& denoiser, const nn::Tensor<double>& cond,
                          std::size_t motion_dim, std::size_t S, const Schedule& sched,
                          std::uint64_t seed, std::uint64_t first_stream = 0);

// MSE(eps, eps_theta(q_sample(x0, k, eps), k, M)).
double training_loss(const DenoiserFn& denoiser, const nn::Tensor<double>& x0,
                     const nn::Tensor<double>& cond, std::size_t k,
                     const nn::Tensor<double>& eps, const Schedule& sched);

} // namespace fad
