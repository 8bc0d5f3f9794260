#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fad/tensor.hpp"

namespace fad::synth {

// Linear read-outs of the shared latent. Drawn once per corpus so that every
// sequence obeys the same speaker -> listener relation.
struct Coupling {
    nn::Tensor<double> listener;     // [56, latent]
    nn::Tensor<double> speaker;      // [56, latent]
    nn::Tensor<double> speaker_bias; // [56]
};

Coupling make_coupling(std::uint64_t seed, std::size_t latent_dim);

struct DyadParams {
    std::uint64_t seed = 0;
    std::size_t T = 64;
    std::size_t delay = 4;
    std::size_t latent_dim = 8;
    double smoothing = 0.6;
    double noise_sigma = 0.02;
    std::size_t image_size = 96;
    std::size_t channels = 1;
    Coupling coupling; // empty: drawn from `seed`
};

void validate(const DyadParams& p);

struct Dyad {
    nn::Tensor<float> frames;          // [T, C, S, S] in [0, 1]
    std::vector<float> audio;          // frame_to_sample(T) samples at 16 kHz
    nn::Tensor<float> speaker_motion;  // [T, 56]
    nn::Tensor<float> listener_motion; // [T, 56]
    nn::Tensor<double> latent;         // [T + delay, latent]; row u holds z_{u - delay}
};

// Speaker channels are driven by z_t, the listener by z_{t - delay}. Video
// (a Gaussian blob) encodes latent dims 0..3, audio (a tone bank) dims 4..7.
Dyad generate_dyad(const DyadParams& p);

struct Split {
    std::vector<std::size_t> train, val, test;
};

// Seeded 70/20/10 split of sequence indices.
Split make_split(std::size_t n, std::uint64_t seed);

struct CorpusParams {
    std::uint64_t seed = 0;
    std::size_t sequences = 100;
    DyadParams dyad; // seed and coupling are filled per corpus
};

struct Corpus {
    std::size_t T = 0;
    std::size_t channels = 1;
    std::size_t image_size = 96;
    std::size_t delay = 0;
    std::size_t latent_dim = 0;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<Dyad> sequences; // `latent` is not persisted
    Split split;

    std::size_t size() const { return sequences.size(); }
    std::size_t audio_len() const;
};

Corpus generate_corpus(const CorpusParams& p);

inline constexpr int kManifestVersion = 1;

// Writes manifest.json plus one blob per field, each [S, ...] row-major f32.
// Returns the manifest path.
std::filesystem::path write_dataset(const Corpus& c, const std::filesystem::path& dir,
                                    bool export_wav = false);
// Validates every blob size before loading any data.
Corpus read_dataset(const std::filesystem::path& manifest);

} // namespace fad::synth
