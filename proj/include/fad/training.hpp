#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fad/model.hpp"
#include "fad/synthdata.hpp"

namespace fad {

// Regression target of the denoising loss.
//   epsilon:  MSE(eps, eps_hat)
//   velocity: MSE(v, u) with v = sqrt(abar_k) eps - sqrt(1 - abar_k) x_0 and u the
//             raw head; needs the `v` prediction. Equals the epsilon loss
//             weighted by 1 / abar_k.
enum class LossTarget { epsilon, velocity };

LossTarget parse_loss_target(const std::string& s);
std::string to_string(LossTarget t);

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.95;
    double beta2 = 0.999;
    double weight_decay = 1e-4;
    double eps = 1e-8;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    // Offset between consecutive training windows (frames); 1 = every window.
    std::size_t window_stride = 1;
    // 0 = no cap beyond `epochs`.
    std::size_t max_steps = 0;
    // Write a checkpoint every N steps (0 = final only).
    std::size_t checkpoint_every = 0;
    LossTarget loss = LossTarget::epsilon;
};

void validate(const TrainConfig& cfg);
void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    std::vector<nn::Tensor<T>> m, v;

    void init(const std::vector<nn::Parameter<T>*>& params);
};

// Decoupled weight decay, then the bias-corrected Adam update:
//   p <- p - lr wd p;  p <- p - lr mhat / (sqrt(vhat) + eps)
template <typename T>
void adamw_step(const std::vector<nn::Parameter<T>*>& params,
                const std::vector<std::string>& names, AdamState<T>& state,
                const TrainConfig& cfg);

// k ~ Uniform{1..K}, one per item.
std::vector<std::size_t> sample_timesteps(std::mt19937_64& rng, std::size_t n, std::size_t K);

// Sliding windows over a set of sequences: speaker clip [o, o + l) paired with
// the listener frames [o + l, o + 2l).
struct TrainingSet {
    struct Window {
        std::size_t seq = 0;
        std::size_t offset = 0;
    };

    const synth::Corpus* corpus = nullptr;
    std::size_t clip_len = 0;
    std::vector<Window> windows;
    std::vector<nn::Tensor<float>> log_mel; // per window, [l, n_mels]

    std::size_t size() const { return windows.size(); }
};

TrainingSet make_training_set(const synth::Corpus& corpus, const std::vector<std::size_t>& seqs,
                              std::size_t clip_len, std::size_t stride, const MelConfig& mel);

struct LossRow {
    std::size_t step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

std::string loss_trace_csv(const std::vector<LossRow>& rows);

class Trainer {
public:
    Trainer(ListenerModel& model, const TrainConfig& cfg, const TrainingSet& data);

    const TrainConfig& config() const { return cfg_; }
    std::size_t steps_per_epoch() const;
    std::size_t total_steps() const;
    std::size_t step() const { return adam_.step; }
    AdamState<float>& adam() { return adam_; }
    const AdamState<float>& adam() const { return adam_; }

    // One optimization step on the next minibatch; returns its loss.
    double train_step();
    // Denoising loss of the minibatch used by step `step` without updating.
    double batch_loss(std::size_t step);

    // Runs until total_steps(); `on_step` sees every trace row.
    std::vector<LossRow> run(const std::function<void(const LossRow&)>& on_step = {});

private:
    struct Batch {
        std::vector<TrainingSet::Window> windows;
        std::vector<std::size_t> window_ids;
    };
    Batch batch_for(std::size_t step);
    double forward_backward(const Batch& b, std::size_t step, bool backward);

    ListenerModel& model_;
    TrainConfig cfg_;
    const TrainingSet& data_;
    AdamState<float> adam_;
    std::vector<std::string> names_;
    std::vector<nn::Parameter<float>*> params_;
    std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
    std::vector<std::size_t> order_;
};

// Checkpoint file: "FADCKPT1", u64 LE header length, JSON header (version,
// model/train config, parameter manifest with shapes and float offsets, audio
// standardization, optimizer state), then the little-endian f32 blob.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ListenerModel& model,
                     const TrainConfig& train, const AdamState<float>& adam);

struct LoadedConfig {
    ModelConfig model;
    TrainConfig train;
};
LoadedConfig read_checkpoint_config(const std::filesystem::path& path);

// Loads weights (and optimizer state when `adam` is given) into a model built
// from a compatible config; shape differences are errors.
void load_checkpoint(const std::filesystem::path& path, ListenerModel& model,
                     AdamState<float>* adam = nullptr);

} // namespace fad
