#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fad/autograd.hpp"
#include "fad/params.hpp"

namespace fad {

enum class Modality { audio, video, both };

Modality parse_modality(const std::string& s);
std::string to_string(Modality m);

// ---------------------------------------------------------------------------
// Audio

struct MelConfig {
    int sample_rate = 16000;
    std::size_t n_mels = 128;
    std::size_t fft_size = 1024;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-10;
};

void validate(const MelConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Frame-synchronous log-mel extractor. One FFT window (periodic Hann,
// fft_size samples, zero-padded past the audio edges) is centred on each
// video frame's midpoint, round((2t + 1) * 8000 / 30) samples into the audio.
// Instances own FFT scratch buffers: use one per thread.
class MelSpectrogram {
public:
    explicit MelSpectrogram(MelConfig cfg = {});
    ~MelSpectrogram();
    MelSpectrogram(const MelSpectrogram&) = delete;
    MelSpectrogram& operator=(const MelSpectrogram&) = delete;

    const MelConfig& config() const { return cfg_; }
    // Triangular HTK-scale filters evaluated at FFT bin frequencies,
    // [n_mels, fft_size / 2 + 1].
    const nn::Tensor<double>& filterbank() const { return filters_; }

    nn::Tensor<float> compute(std::span<const float> audio, std::size_t n_frames);

private:
    struct Fft;
    MelConfig cfg_;
    std::vector<double> window_;
    nn::Tensor<double> filters_;
    std::unique_ptr<Fft> fft_;
};

// Convenience wrapper building a one-shot extractor.
nn::Tensor<float> mel_spectrogram(std::span<const float> audio, const MelConfig& cfg,
                                  std::size_t n_frames);

// Centre sample of frame t's analysis window.
std::size_t mel_frame_center(std::size_t t);

// Fixed per-bin standardization applied to log-mel rows before fusion.
struct AudioNormalizer {
    std::vector<float> mean;
    std::vector<float> inv_std;

    static AudioNormalizer identity(std::size_t bins);
    // Statistics over all rows of the given [R, bins] feature matrices.
    static AudioNormalizer fit(const std::vector<nn::Tensor<float>>& feats);
    nn::Tensor<float> apply(const nn::Tensor<float>& feats) const;
};

// ---------------------------------------------------------------------------
// Video

struct VisualEncoderConfig {
    std::size_t image_size = 96;
    std::size_t in_channels = 1;
    std::vector<std::size_t> widths{16, 32, 64, 96};
    std::size_t head_channels = 96;
    std::size_t kernel = 3;
    double temperature = 1.0;

    std::size_t output_dim() const { return 2 * head_channels; }
};

void validate(const VisualEncoderConfig& cfg);

// Strided conv/ReLU stack, a 1x1 projection head and spatial-softmax pooling:
// frames [F, C, S, S] -> keypoint features [F, 2 * head_channels].
template <typename T>
class VisualEncoder {
public:
    VisualEncoder(const VisualEncoderConfig& cfg, nn::ParameterStore<T>& store,
                  std::mt19937_64& rng);

    const VisualEncoderConfig& config() const { return cfg_; }
    nn::Var<T> forward(nn::Graph<T>& g, nn::Var<T> frames) const;

    nn::Parameter<T>& head_weight() { return *head_w_; }
    nn::Parameter<T>& head_bias() { return *head_b_; }

private:
    VisualEncoderConfig cfg_;
    std::vector<nn::Parameter<T>*> conv_w_, conv_b_;
    nn::Parameter<T>* head_w_ = nullptr;
    nn::Parameter<T>* head_b_ = nullptr;
};

// Inference convenience: [l, C, S, S] -> [l, 2 * head_channels].
template <typename T>
nn::Tensor<T> encode_visual(const VisualEncoder<T>& enc, const nn::Tensor<T>& frames);

// ---------------------------------------------------------------------------
// Fusion

// Concatenates per-frame video and audio features (video first). The absent
// modality is zeroed so the width stays video_dim + audio_dim.
template <typename T>
nn::Var<T> fuse(nn::Var<T> video, nn::Var<T> audio, Modality modality);

nn::Tensor<float> fuse(const nn::Tensor<float>& video, const nn::Tensor<float>& audio,
                       Modality modality);

} // namespace fad
