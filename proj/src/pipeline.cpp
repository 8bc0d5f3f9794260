#include "fad/pipeline.hpp"

#include <chrono>

namespace fad {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

} // namespace

nn::Tensor<float> infer_clip(const ListenerModel& model, const Clip& clip, MelSpectrogram& mel,
                             std::size_t steps, std::uint64_t seed, std::uint64_t stream,
                             ClipLatency* timing) {
    std::size_t calls = 0;
    const auto t0 = Clock::now();
    const nn::Tensor<float> cond = model.condition(clip, mel);
    const auto t1 = Clock::now();
    const nn::Tensor<double> x = sample(model.denoiser(&calls), cond.cast<double>(), kMotionDim,
                                        steps, model.schedule(), seed, stream);
    if (timing) {
        timing->clip = clip.index;
        timing->encode_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        timing->denoise_ms = ms_since(t1);
        timing->denoiser_calls = calls;
    }
    return x.cast<float>();
}

StreamOutput generate_stream(const ListenerModel& model, const nn::Tensor<float>& video,
                             std::span<const float> audio, std::size_t steps,
                             std::uint64_t seed, std::uint64_t stream_base) {
    const std::size_t l = model.config().clip_len;
    const ClipStream clips = segment_clips(video, audio, l);
    require(clips.count() >= 2, "generate: need at least two clips (" +
                                    std::to_string(2 * l) + " frames) to predict a future window");
    MelSpectrogram mel(model.config().mel);
    StreamOutput out;
    out.first_frame = l;
    out.motion = nn::Tensor<float>({(clips.count() - 1) * l, kMotionDim});
    for (std::size_t i = 0; i + 1 < clips.count(); ++i) {
        ClipLatency timing;
        const nn::Tensor<float> x =
            infer_clip(model, clips.clips[i], mel, steps, seed, stream_base + i, &timing);
        std::copy(x.storage().begin(), x.storage().end(), out.motion.ptr() + i * l * kMotionDim);
        out.latency.push_back(timing);
    }
    return out;
}

} // namespace fad
