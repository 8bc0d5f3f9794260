#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "fad/model.hpp"
#include "fad/synthdata.hpp"
#include "fad/tensor.hpp"

namespace fad::test {

template <typename T = double>
nn::Tensor<T> randn(nn::Shape shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    nn::Tensor<T> t(std::move(shape));
    for (auto& v : t.storage()) v = static_cast<T>(n(rng));
    return t;
}

template <typename T = double>
nn::Tensor<T> uniform(nn::Shape shape, std::uint64_t seed, double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    nn::Tensor<T> t(std::move(shape));
    for (auto& v : t.storage()) v = static_cast<T>(u(rng));
    return t;
}

// Small model that trains in milliseconds per step: 16x16 frames, 16 mel
// bins, an 8-wide ELNet.
inline ModelConfig tiny_model(Modality modality = Modality::both, std::uint64_t seed = 0) {
    ModelConfig c;
    c.modality = modality;
    c.init_seed = seed;
    c.mel.n_mels = 16;
    c.mel.fft_size = 256;
    c.visual.image_size = 16;
    c.visual.widths = {4, 8};
    c.visual.head_channels = 8;
    c.elnet.base_width = 8;
    c.elnet.groups = 4;
    c.elnet.time_embed_dim = 16;
    c.elnet.blocks_per_stage = 1;
    c.elnet.cond_dim = c.visual.output_dim() + c.mel.n_mels;
    return c;
}

inline synth::Corpus tiny_corpus(std::size_t sequences = 10, std::size_t T = 24,
                                 std::uint64_t seed = 5) {
    synth::CorpusParams p;
    p.seed = seed;
    p.sequences = sequences;
    p.dyad.T = T;
    p.dyad.image_size = 16;
    return synth::generate_corpus(p);
}

// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("fad_test_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace fad::test
