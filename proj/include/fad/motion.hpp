#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fad/tensor.hpp"

namespace fad {

inline constexpr std::size_t kExpressionDim = 50;
inline constexpr std::size_t kJawDim = 3;
inline constexpr std::size_t kHeadDim = 3;
inline constexpr std::size_t kRotationDim = kJawDim + kHeadDim;
inline constexpr std::size_t kMotionDim = kExpressionDim + kRotationDim;

inline constexpr int kFrameRate = 30;
inline constexpr int kSampleRate = 16000;

// One frame of listener facial motion. Flattened layout is
// expression[0..50), jaw[50..53), head[53..56).
struct MotionFrame {
    std::array<float, kExpressionDim> expression{};
    std::array<float, kJawDim> jaw{};
    std::array<float, kHeadDim> head{};

    bool operator==(const MotionFrame&) const = default;
};

struct MotionSequence {
    std::vector<MotionFrame> frames;

    std::size_t length() const { return frames.size(); }
    bool operator==(const MotionSequence&) const = default;
};

nn::Tensor<float> flatten_motion(const MotionSequence& seq);
MotionSequence unflatten_motion(const nn::Tensor<float>& m);

struct MetricViews {
    nn::Tensor<float> expression; // [T, 50]
    nn::Tensor<float> rotation;   // [T, 6]
};

MetricViews split_metric_views(const nn::Tensor<float>& m);
nn::Tensor<double> expression_view(const nn::Tensor<double>& m);
nn::Tensor<double> rotation_view(const nn::Tensor<double>& m);

// First audio sample of video frame `frame` at 16 kHz / 30 FPS, rounded to
// the nearest sample: round(frame * 16000 / 30).
std::size_t frame_to_sample(std::size_t frame);

struct Clip {
    std::size_t index = 0;
    std::size_t first_frame = 0;
    std::size_t first_sample = 0;
    nn::Tensor<float> video;  // [l, C, H, W]
    std::vector<float> audio; // 16 kHz mono samples for the same span
};

struct ClipStream {
    std::vector<Clip> clips;
    std::size_t clip_len = 0;

    std::size_t count() const { return clips.size(); }
};

// Splits frame-aligned video [T, C, H, W] and audio into floor(T / l) clips;
// trailing frames that do not fill a clip are dropped.
ClipStream segment_clips(const nn::Tensor<float>& video, std::span<const float> audio,
                         std::size_t clip_len);

} // namespace fad
