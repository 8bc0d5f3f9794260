#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "fad/autograd.hpp"
#include "fad/diffusion.hpp"
#include "fad/params.hpp"
#include "fad/perception.hpp"

namespace fad {

// What the U-Net head regresses before it is mapped back to a noise estimate.
//   epsilon: eps_hat = u
//   v:       eps_hat = sqrt(abar_k) u + sqrt(1 - abar_k) x_k
// Both return eps_hat; `v` keeps the clean-sample estimate well conditioned
// at k = K, where abar_K is ~1e-7 under the squared-cosine schedule.
enum class Prediction { epsilon, v };

Prediction parse_prediction(const std::string& s);
std::string to_string(Prediction p);

struct ELNetConfig {
    std::size_t motion_dim = 56;
    std::size_t cond_dim = 320;
    std::size_t clip_len = 8;
    std::size_t base_width = 64;
    std::size_t depth = 2;
    std::size_t groups = 8;
    std::size_t time_embed_dim = 128;
    std::size_t kernel = 3;
    std::size_t blocks_per_stage = 2;
    Prediction prediction = Prediction::v;
    bool use_skips = true;

    std::size_t in_channels() const { return motion_dim + cond_dim; }
    std::size_t stage_width(std::size_t s) const { return base_width << s; }
};

void validate(const ELNetConfig& cfg);

// Raw sinusoidal embedding: [sin(k f_0), ..., sin(k f_{h-1}), cos(k f_0), ...]
// with f_i = exp(-ln(10000) i / h), h = dim / 2.
template <typename T>
nn::Tensor<T> timestep_embedding(std::size_t k, std::size_t dim);

// 1-D temporal U-Net noise predictor eps_theta(x_k, k, M).
template <typename T>
class ELNet {
public:
    ELNet(const ELNetConfig& cfg, const Schedule& sched, nn::ParameterStore<T>& store,
          std::mt19937_64& rng);

    const ELNetConfig& config() const { return cfg_; }

    // xk [N, l, motion_dim], cond [N, l, cond_dim], one timestep per item.
    nn::Var<T> forward(nn::Graph<T>& g, nn::Var<T> xk, const std::vector<std::size_t>& ks,
                       nn::Var<T> cond) const;

    // The raw U-Net output u before the prediction mapping above.
    nn::Var<T> forward_head(nn::Graph<T>& g, nn::Var<T> xk, const std::vector<std::size_t>& ks,
                            nn::Var<T> cond) const;

    // Single clip: xk [l, 56], M [l, 320] -> eps_hat [l, 56].
    nn::Tensor<T> denoise(const nn::Tensor<T>& xk, std::size_t k,
                          const nn::Tensor<T>& cond) const;

    // Wiring hooks used by tests and ablations.
    void set_use_skips(bool on) { cfg_.use_skips = on; }
    nn::Parameter<T>& final_weight() { return *final_w_; }
    nn::Parameter<T>& final_bias() { return *final_b_; }
    // Zeroes every weight that reads the condition channels of the input.
    void zero_condition_pathway();

private:
    struct ConvBlock {
        nn::Parameter<T>* w = nullptr;
        nn::Parameter<T>* b = nullptr;
        nn::Parameter<T>* gamma = nullptr;
        nn::Parameter<T>* beta = nullptr;
    };
    struct ResBlock {
        std::size_t in = 0, out = 0;
        ConvBlock first, second;
        nn::Parameter<T>* time_w = nullptr;
        nn::Parameter<T>* time_b = nullptr;
        nn::Parameter<T>* skip_w = nullptr; // null when in == out
        nn::Parameter<T>* skip_b = nullptr;
    };
    struct Resample {
        nn::Parameter<T>* w = nullptr;
        nn::Parameter<T>* b = nullptr;
    };

    ConvBlock make_conv_block(const std::string& name, std::size_t in, std::size_t out,
                              std::size_t k);
    ResBlock make_res_block(const std::string& name, std::size_t in, std::size_t out);
    nn::Var<T> conv_block(nn::Graph<T>& g, const ConvBlock& b, nn::Var<T> x) const;
    nn::Var<T> res_block(nn::Graph<T>& g, const ResBlock& b, nn::Var<T> x,
                         nn::Var<T> temb) const;

    ELNetConfig cfg_;
    std::vector<double> alpha_bars_;
    nn::ParameterStore<T>* store_ = nullptr;
    std::mt19937_64* rng_ = nullptr;

    nn::Parameter<T>* time_w1_ = nullptr;
    nn::Parameter<T>* time_b1_ = nullptr;
    nn::Parameter<T>* time_w2_ = nullptr;
    nn::Parameter<T>* time_b2_ = nullptr;
    std::vector<std::vector<ResBlock>> down_, up_;
    std::vector<Resample> downsample_, upsample_;
    std::vector<ResBlock> mid_;
    ConvBlock final_block_;
    nn::Parameter<T>* final_w_ = nullptr;
    nn::Parameter<T>* final_b_ = nullptr;
};

// Analytic FLOPs (2 x multiply-adds of every conv, dense and mel-filterbank
// projection) for one clip. The FFT and elementwise ops are not counted.
struct FlopCount {
    double visual = 0.0;     // encoder over l frames
    double audio = 0.0;      // mel filterbank over l frames
    double denoiser_pass = 0.0;
    std::size_t steps = 1;

    double encoders() const { return visual + audio; }
    double total() const { return encoders() + static_cast<double>(steps) * denoiser_pass; }
};

FlopCount count_flops(const ELNetConfig& elnet, const VisualEncoderConfig& visual,
                      const MelConfig& mel, std::size_t steps);

} // namespace fad
