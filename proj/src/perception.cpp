#include "fad/perception.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fad/motion.hpp"
#include "fad/ops.hpp"

namespace fad {

Modality parse_modality(const std::string& s) {
    if (s == "audio") return Modality::audio;
    if (s == "video") return Modality::video;
    if (s == "both") return Modality::both;
    throw Error("unknown modality '" + s + "' (expected audio|video|both)");
}

std::string to_string(Modality m) {
    switch (m) {
    case Modality::audio: return "audio";
    case Modality::video: return "video";
    case Modality::both: return "both";
    }
    return "both";
}

// ---------------------------------------------------------------------------
// Mel

void validate(const MelConfig& cfg) {
    require(cfg.sample_rate > 0, "mel: sample_rate must be positive");
    require(cfg.n_mels >= 1, "mel: n_mels must be positive");
    require(cfg.fft_size >= 2 && (cfg.fft_size & (cfg.fft_size - 1)) == 0,
            "mel: fft_size must be a power of two");
    require(cfg.fmin >= 0.0 && cfg.fmax > cfg.fmin && cfg.fmax <= cfg.sample_rate / 2.0,
            "mel: need 0 <= fmin < fmax <= sample_rate/2");
    require(cfg.log_floor > 0.0, "mel: log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t mel_frame_center(std::size_t t) {
    return ((2 * t + 1) * 16000 + 30) / 60;
}

struct MelSpectrogram::Fft {
    std::size_t n;
    double* in;
    fftw_complex* out;
    fftw_plan plan;

    explicit Fft(std::size_t size)
        : n(size),
          in(static_cast<double*>(fftw_malloc(sizeof(double) * size))),
          out(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (size / 2 + 1)))),
          plan(fftw_plan_dft_r2c_1d(static_cast<int>(size), in, out, FFTW_ESTIMATE)) {}
    ~Fft() {
        fftw_destroy_plan(plan);
        fftw_free(in);
        fftw_free(out);
    }
};

MelSpectrogram::MelSpectrogram(MelConfig cfg) : cfg_(cfg) {
    validate(cfg_);
    const std::size_t n = cfg_.fft_size;
    const std::size_t bins = n / 2 + 1;
    window_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                          static_cast<double>(n));
    }
    const double mlo = hz_to_mel(cfg_.fmin), mhi = hz_to_mel(cfg_.fmax);
    std::vector<double> edges(cfg_.n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) /
                                       static_cast<double>(cfg_.n_mels + 1));
    }
    filters_ = nn::Tensor<double>({cfg_.n_mels, bins});
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
        const double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg_.sample_rate / static_cast<double>(n);
            const double w = std::min((f - lo) / (c - lo), (hi - f) / (hi - c));
            filters_(m, k) = std::max(0.0, w);
        }
    }
    fft_ = std::make_unique<Fft>(n);
}

MelSpectrogram::~MelSpectrogram() = default;

nn::Tensor<float> MelSpectrogram::compute(std::span<const float> audio,
                                          std::size_t n_frames) {
    require(audio.size() + 1 >= frame_to_sample(n_frames),
            "mel: audio too short for " + std::to_string(n_frames) + " frames");
    const std::size_t n = cfg_.fft_size;
    const std::size_t bins = n / 2 + 1;
    const long half = static_cast<long>(n / 2);
    std::vector<double> power(bins);
    nn::Tensor<float> out({n_frames, cfg_.n_mels});
    for (std::size_t t = 0; t < n_frames; ++t) {
        const long start = static_cast<long>(mel_frame_center(t)) - half;
        for (std::size_t i = 0; i < n; ++i) {
            const long s = start + static_cast<long>(i);
            const bool inside = s >= 0 && s < static_cast<long>(audio.size());
            fft_->in[i] = inside ? window_[i] * static_cast<double>(audio[s]) : 0.0;
        }
        fftw_execute(fft_->plan);
        for (std::size_t k = 0; k < bins; ++k) {
            power[k] = fft_->out[k][0] * fft_->out[k][0] + fft_->out[k][1] * fft_->out[k][1];
        }
        for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
            const double* w = filters_.ptr() + m * bins;
            double e = 0.0;
            for (std::size_t k = 0; k < bins; ++k) e += w[k] * power[k];
            out(t, m) = static_cast<float>(std::log(std::max(e, cfg_.log_floor)));
        }
    }
    return out;
}

nn::Tensor<float> mel_spectrogram(std::span<const float> audio, const MelConfig& cfg,
                                  std::size_t n_frames) {
    MelSpectrogram mel(cfg);
    return mel.compute(audio, n_frames);
}

AudioNormalizer AudioNormalizer::identity(std::size_t bins) {
    return {std::vector<float>(bins, 0.0f), std::vector<float>(bins, 1.0f)};
}

AudioNormalizer AudioNormalizer::fit(const std::vector<nn::Tensor<float>>& feats) {
    require(!feats.empty(), "audio normalizer: no features");
    const std::size_t bins = feats.front().dim(1);
    std::vector<double> s(bins, 0.0), s2(bins, 0.0);
    std::size_t rows = 0;
    for (const auto& f : feats) {
        require(f.rank() == 2 && f.dim(1) == bins, "audio normalizer: inconsistent widths");
        for (std::size_t r = 0; r < f.dim(0); ++r) {
            for (std::size_t b = 0; b < bins; ++b) {
                const double v = f(r, b);
                s[b] += v;
                s2[b] += v * v;
            }
        }
        rows += f.dim(0);
    }
    AudioNormalizer norm;
    norm.mean.resize(bins);
    norm.inv_std.resize(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        const double mu = s[b] / static_cast<double>(rows);
        const double var = std::max(0.0, s2[b] / static_cast<double>(rows) - mu * mu);
        norm.mean[b] = static_cast<float>(mu);
        norm.inv_std[b] = static_cast<float>(1.0 / std::sqrt(var + 1e-6));
    }
    return norm;
}

nn::Tensor<float> AudioNormalizer::apply(const nn::Tensor<float>& feats) const {
    require(feats.rank() == 2 && feats.dim(1) == mean.size(),
            "audio normalizer: expected [R," + std::to_string(mean.size()) + "]");
    nn::Tensor<float> out = feats;
    for (std::size_t r = 0; r < out.dim(0); ++r) {
        for (std::size_t b = 0; b < mean.size(); ++b) {
            out(r, b) = (out(r, b) - mean[b]) * inv_std[b];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Visual encoder

void validate(const VisualEncoderConfig& cfg) {
    require(cfg.in_channels >= 1, "visual: in_channels must be positive");
    require(!cfg.widths.empty(), "visual: channel plan must be non-empty");
    require(cfg.head_channels >= 1, "visual: head_channels must be positive");
    require(cfg.temperature > 0.0, "visual: temperature must be positive");
    std::size_t s = cfg.image_size;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
        require(s >= 2, "visual: too many stride-2 stages for the input resolution");
        s = (s + 2 * (cfg.kernel / 2) - cfg.kernel) / 2 + 1;
    }
}

template <typename T>
VisualEncoder<T>::VisualEncoder(const VisualEncoderConfig& cfg,
                                nn::ParameterStore<T>& store, std::mt19937_64& rng)
    : cfg_(cfg) {
    validate(cfg_);
    std::size_t in = cfg_.in_channels;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
        const std::size_t out = cfg_.widths[i];
        const std::size_t fan_in = in * cfg_.kernel * cfg_.kernel;
        const std::string p = "visual.conv" + std::to_string(i);
        conv_w_.push_back(&store.add(
            p + ".weight",
            nn::uniform_fan_in<T>({out, in, cfg_.kernel, cfg_.kernel}, fan_in, rng)));
        conv_b_.push_back(&store.add(p + ".bias", nn::uniform_fan_in<T>({out}, fan_in, rng)));
        in = out;
    }
    head_w_ = &store.add("visual.head.weight",
                         nn::uniform_fan_in<T>({cfg_.head_channels, in, 1, 1}, in, rng));
    head_b_ = &store.add("visual.head.bias", nn::Tensor<T>({cfg_.head_channels}));
}

template <typename T>
nn::Var<T> VisualEncoder<T>::forward(nn::Graph<T>& g, nn::Var<T> frames) const {
    require(frames.rank() == 4 && frames.dim(1) == cfg_.in_channels &&
                frames.dim(2) == cfg_.image_size && frames.dim(3) == cfg_.image_size,
            "visual encoder expects [F," + std::to_string(cfg_.in_channels) + "," +
                std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) +
                "], got " + nn::shape_str(frames.shape()));
    nn::Var<T> h = frames;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        h = nn::relu(nn::conv2d(h, g.param(*conv_w_[i]), g.param(*conv_b_[i]), 2,
                                cfg_.kernel / 2));
    }
    h = nn::conv2d(h, g.param(*head_w_), g.param(*head_b_), 1, 0);
    return nn::spatial_softmax(h, static_cast<T>(cfg_.temperature));
}

template <typename T>
nn::Tensor<T> encode_visual(const VisualEncoder<T>& enc, const nn::Tensor<T>& frames) {
    nn::Graph<T> g(nn::GradMode::disabled);
    return enc.forward(g, g.view(frames)).value();
}

// ---------------------------------------------------------------------------
// Fusion

template <typename T>
nn::Var<T> fuse(nn::Var<T> video, nn::Var<T> audio, Modality modality) {
    require(video.rank() == 2 && audio.rank() == 2,
            "fuse: expected [l,d_v] video and [l,d_a] audio features");
    require(video.dim(0) == audio.dim(0),
            "fuse: row-count mismatch " + std::to_string(video.dim(0)) + " vs " +
                std::to_string(audio.dim(0)));
    nn::Graph<T>& g = video.graph();
    if (modality == Modality::audio) {
        video = g.constant(nn::Tensor<T>(video.shape()));
    } else if (modality == Modality::video) {
        audio = g.constant(nn::Tensor<T>(audio.shape()));
    }
    return nn::concat(video, audio, 1);
}

nn::Tensor<float> fuse(const nn::Tensor<float>& video, const nn::Tensor<float>& audio,
                       Modality modality) {
    nn::Graph<float> g(nn::GradMode::disabled);
    return fuse(g.view(video), g.view(audio), modality).value();
}

template class VisualEncoder<float>;
template class VisualEncoder<double>;
template nn::Tensor<float> encode_visual(const VisualEncoder<float>&, const nn::Tensor<float>&);
template nn::Tensor<double> encode_visual(const VisualEncoder<double>&,
                                          const nn::Tensor<double>&);
template nn::Var<float> fuse(nn::Var<float>, nn::Var<float>, Modality);
template nn::Var<double> fuse(nn::Var<double>, nn::Var<double>, Modality);

} // namespace fad
