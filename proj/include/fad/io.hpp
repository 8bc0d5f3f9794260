#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fad/tensor.hpp"

namespace fad::io {

// Raw little-endian 32-bit float blobs.
void write_f32(const std::filesystem::path& path, std::span<const float> data);
// Errors naming `what` unless the file holds exactly `count` floats.
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t count,
                            const std::string& what);
void check_size(const std::filesystem::path& path, std::uintmax_t bytes, const std::string& what);

void write_bytes(const std::filesystem::path& path, const std::string& bytes);
std::string read_bytes(const std::filesystem::path& path);

// 16-bit PCM mono WAV. Samples are clipped to [-1, 1] on write.
void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate);
std::vector<float> read_wav(const std::filesystem::path& path, int expected_rate);

// A single speaker stream: frame blob plus audio, described by a JSON sidecar
// {"frames": "...f32", "shape": [T, C, H, W], "audio": "...wav" | "...f32"}.
struct Stream {
    nn::Tensor<float> video;
    std::vector<float> audio;
};

Stream read_stream(const std::filesystem::path& sidecar);
void write_stream(const std::filesystem::path& sidecar, const Stream& s);

} // namespace fad::io
