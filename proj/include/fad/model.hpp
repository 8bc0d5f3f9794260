#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>

#include <json.hpp>

#include "fad/diffusion.hpp"
#include "fad/elnet.hpp"
#include "fad/motion.hpp"
#include "fad/perception.hpp"

namespace fad {

// Everything needed to rebuild a listener model with identical shapes.
struct ModelConfig {
    std::size_t clip_len = 8;
    std::size_t K = 100;
    ScheduleKind schedule = ScheduleKind::squared_cosine;
    Modality modality = Modality::both;
    MelConfig mel;
    VisualEncoderConfig visual;
    ELNetConfig elnet;
    std::uint64_t init_seed = 0;
};

// Cross-field checks: clip length shared with ELNet, d_m = d_v + d_a, motion width.
void validate(const ModelConfig& cfg);

void to_json(nlohmann::json& j, const ModelConfig& cfg);
// Missing keys keep their defaults, so partial config files are accepted.
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// Visual encoder, audio standardization and the ELNet denoiser sharing one
// parameter store, in 32-bit precision.
class ListenerModel {
public:
    explicit ListenerModel(const ModelConfig& cfg);
    ListenerModel(const ListenerModel&) = delete;
    ListenerModel& operator=(const ListenerModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    const Schedule& schedule() const { return sched_; }
    nn::ParameterStore<float>& parameters() { return store_; }
    const nn::ParameterStore<float>& parameters() const { return store_; }
    const VisualEncoder<float>& visual() const { return *visual_; }
    const ELNet<float>& elnet() const { return *elnet_; }
    ELNet<float>& elnet() { return *elnet_; }
    AudioNormalizer& audio_norm() { return audio_norm_; }
    const AudioNormalizer& audio_norm() const { return audio_norm_; }

    bool uses_video() const { return cfg_.modality != Modality::audio; }
    bool uses_audio() const { return cfg_.modality != Modality::video; }

    // Raw log-mel rows [F, n_mels] -> standardized rows.
    nn::Tensor<float> audio_features(const nn::Tensor<float>& log_mel) const;

    // Inference conditioning for one clip: [l, d_m]. Skips the encoder of an
    // absent modality entirely.
    nn::Tensor<float> condition(const Clip& clip, MelSpectrogram& mel) const;

    // eps_theta adapter for the sampler; counts invocations when `calls` is set.
    DenoiserFn denoiser(std::size_t* calls = nullptr) const;

private:
    ModelConfig cfg_;
    Schedule sched_;
    nn::ParameterStore<float> store_;
    std::unique_ptr<VisualEncoder<float>> visual_;
    std::unique_ptr<ELNet<float>> elnet_;
    AudioNormalizer audio_norm_;
};

} // namespace fad
