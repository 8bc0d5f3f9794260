#include "fad/motion.hpp"

#include <algorithm>
#include <cmath>

namespace fad {

nn::Tensor<float> flatten_motion(const MotionSequence& seq) {
    nn::Tensor<float> out({seq.length(), kMotionDim});
    for (std::size_t t = 0; t < seq.length(); ++t) {
        const MotionFrame& f = seq.frames[t];
        float* row = out.ptr() + t * kMotionDim;
        std::copy(f.expression.begin(), f.expression.end(), row);
        std::copy(f.jaw.begin(), f.jaw.end(), row + kExpressionDim);
        std::copy(f.head.begin(), f.head.end(), row + kExpressionDim + kJawDim);
        for (std::size_t j = 0; j < kMotionDim; ++j) {
            require(std::isfinite(row[j]), "motion frame " + std::to_string(t) +
                                               " has a non-finite coefficient");
        }
    }
    return out;
}

MotionSequence unflatten_motion(const nn::Tensor<float>& m) {
    require(m.rank() == 2 && m.dim(1) == kMotionDim,
            "motion matrix must be [T,56], got " + nn::shape_str(m.shape()));
    require(m.all_finite(), "motion matrix has non-finite values");
    MotionSequence seq;
    seq.frames.resize(m.dim(0));
    for (std::size_t t = 0; t < m.dim(0); ++t) {
        const float* row = m.ptr() + t * kMotionDim;
        MotionFrame& f = seq.frames[t];
        std::copy_n(row, kExpressionDim, f.expression.begin());
        std::copy_n(row + kExpressionDim, kJawDim, f.jaw.begin());
        std::copy_n(row + kExpressionDim + kJawDim, kHeadDim, f.head.begin());
    }
    return seq;
}

namespace {
template <typename T>
nn::Tensor<T> columns(const nn::Tensor<T>& m, std::size_t begin, std::size_t end) {
    require(m.rank() == 2 && m.dim(1) == kMotionDim,
            "metric views need a [T,56] matrix, got " + nn::shape_str(m.shape()));
    const std::size_t rows = m.dim(0), width = end - begin;
    nn::Tensor<T> out({rows, width});
    for (std::size_t t = 0; t < rows; ++t) {
        std::copy_n(m.ptr() + t * kMotionDim + begin, width, out.ptr() + t * width);
    }
    return out;
}
} // namespace

MetricViews split_metric_views(const nn::Tensor<float>& m) {
    return {columns(m, 0, kExpressionDim), columns(m, kExpressionDim, kMotionDim)};
}

nn::Tensor<double> expression_view(const nn::Tensor<double>& m) {
    return columns(m, 0, kExpressionDim);
}

nn::Tensor<double> rotation_view(const nn::Tensor<double>& m) {
    return columns(m, kExpressionDim, kMotionDim);
}

std::size_t frame_to_sample(std::size_t frame) {
    // round(frame * 16000 / 30) in exact integer arithmetic
    return (frame * 2 * kSampleRate + kFrameRate) / (2 * kFrameRate);
}

ClipStream segment_clips(const nn::Tensor<float>& video, std::span<const float> audio,
                         std::size_t clip_len) {
    require(video.rank() == 4, "video must be [T,C,H,W], got " + nn::shape_str(video.shape()));
    require(clip_len >= 1, "clip length must be positive");
    const std::size_t frames = video.dim(0);
    if (frames < clip_len) {
        throw Error("input shorter than one clip");
    }
    // One sample of rounding slack on the total duration.
    if (audio.size() + 1 < frame_to_sample(frames)) {
        throw Error("audio/video misaligned");
    }
    const std::size_t frame_size = video.size() / frames;
    ClipStream stream;
    stream.clip_len = clip_len;
    const std::size_t n = frames / clip_len;
    stream.clips.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Clip clip;
        clip.index = i;
        clip.first_frame = i * clip_len;
        nn::Shape shape = video.shape();
        shape[0] = clip_len;
        clip.video = nn::Tensor<float>(shape);
        std::copy_n(video.ptr() + clip.first_frame * frame_size, clip_len * frame_size,
                    clip.video.ptr());
        clip.first_sample = frame_to_sample(clip.first_frame);
        const std::size_t end =
            std::min(frame_to_sample(clip.first_frame + clip_len), audio.size());
        clip.audio.assign(audio.begin() + static_cast<long>(clip.first_sample),
                          audio.begin() + static_cast<long>(end));
        stream.clips.push_back(std::move(clip));
    }
    return stream;
}

} // namespace fad
