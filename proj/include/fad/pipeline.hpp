#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fad/model.hpp"

namespace fad {

struct ClipLatency {
    std::size_t clip = 0;
    double encode_ms = 0.0;
    double denoise_ms = 0.0;
    std::size_t denoiser_calls = 0;

    double total_ms() const { return encode_ms + denoise_ms; }
};

struct StreamOutput {
    nn::Tensor<float> motion; // [(n - 1) l, 56]: listener frames [l, n l)
    std::size_t first_frame = 0;
    std::vector<ClipLatency> latency;
};

// Streams a speaker recording clip by clip. Clip i conditions the listener
// frames [(i + 1) l, (i + 2) l), so the last clip has no output. Clip i draws
// its sampler noise from stream_rng(seed, stream_base + i). Latency covers the
// encoders and the sampler only.
StreamOutput generate_stream(const ListenerModel& model, const nn::Tensor<float>& video,
                             std::span<const float> audio, std::size_t steps,
                             std::uint64_t seed, std::uint64_t stream_base = 0);

// Single-clip inference as timed by the benchmark: encoders + S-step sampler.
nn::Tensor<float> infer_clip(const ListenerModel& model, const Clip& clip, MelSpectrogram& mel,
                             std::size_t steps, std::uint64_t seed, std::uint64_t stream,
                             ClipLatency* timing = nullptr);

} // namespace fad
