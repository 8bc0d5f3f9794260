#include "fad/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "fad/diffusion.hpp"
#include "fad/io.hpp"
#include "fad/motion.hpp"

namespace fad::synth {

namespace fs = std::filesystem;

namespace {

constexpr double kTones[4] = {300.0, 800.0, 1800.0, 3500.0};
constexpr std::size_t kVideoDims = 4;

nn::Tensor<double> normal_matrix(nn::Shape shape, double stddev, std::mt19937_64& rng) {
    nn::Tensor<double> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.storage()) v = dist(rng);
    return t;
}

} // namespace

Coupling make_coupling(std::uint64_t seed, std::size_t latent_dim) {
    require(latent_dim >= 1, "coupling: latent_dim must be positive");
    std::mt19937_64 rng = stream_rng(seed, 0xC0u);
    const double sd = 1.0 / std::sqrt(static_cast<double>(latent_dim));
    Coupling c;
    c.listener = normal_matrix({kMotionDim, latent_dim}, sd, rng);
    c.speaker = normal_matrix({kMotionDim, latent_dim}, sd, rng);
    c.speaker_bias = normal_matrix({kMotionDim}, 0.1, rng);
    // Jaw/head rotations move less than expression coefficients.
    for (std::size_t r = kExpressionDim; r < kMotionDim; ++r) {
        for (std::size_t j = 0; j < latent_dim; ++j) {
            c.listener(r, j) *= 0.3;
            c.speaker(r, j) *= 0.3;
        }
    }
    return c;
}

void validate(const DyadParams& p) {
    require(p.T > p.delay, "dyad: T must exceed the delay");
    require(p.delay > 0, "dyad: delay must be positive");
    require(p.smoothing > 0.0 && p.smoothing < 1.0, "dyad: smoothing must lie in (0,1)");
    require(p.noise_sigma >= 0.0, "dyad: noise_sigma must be non-negative");
    require(p.latent_dim >= 8, "dyad: latent_dim must be >= 8 (video and audio dims)");
    require(p.image_size >= 8 && p.channels >= 1, "dyad: bad frame geometry");
    if (!p.coupling.listener.empty()) {
        require(p.coupling.listener.shape() == nn::Shape{kMotionDim, p.latent_dim},
                "dyad: coupling shape does not match latent_dim");
    }
}

Dyad generate_dyad(const DyadParams& p) {
    validate(p);
    const Coupling coupling =
        p.coupling.listener.empty() ? make_coupling(p.seed, p.latent_dim) : p.coupling;
    std::mt19937_64 rng = stream_rng(p.seed, 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const std::size_t L = p.latent_dim;
    const std::size_t U = p.T + p.delay;
    Dyad d;
    d.latent = nn::Tensor<double>({U, L});
    const double amp = std::sqrt(2.0 / 3.0);
    for (std::size_t j = 0; j < L; ++j) {
        double period[3], phase[3];
        for (int m = 0; m < 3; ++m) {
            period[m] = 24.0 + 96.0 * unit(rng);
            phase[m] = 2.0 * std::numbers::pi * unit(rng);
        }
        double ema = 0.0;
        for (std::size_t u = 0; u < U; ++u) {
            double raw = 0.1 * normal(rng);
            for (int m = 0; m < 3; ++m) {
                raw += amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(u) / period[m] +
                                      phase[m]);
            }
            ema = u == 0 ? raw : p.smoothing * ema + (1.0 - p.smoothing) * raw;
            d.latent(u, j) = ema;
        }
    }
    auto z = [&](std::size_t t, std::size_t j) { return d.latent(t + p.delay, j); };

    d.speaker_motion = nn::Tensor<float>({p.T, kMotionDim});
    d.listener_motion = nn::Tensor<float>({p.T, kMotionDim});
    std::vector<double> noise(kMotionDim, 0.0);
    const double innov = std::sqrt(1.0 - p.smoothing * p.smoothing) * p.noise_sigma;
    for (std::size_t t = 0; t < p.T; ++t) {
        for (std::size_t r = 0; r < kMotionDim; ++r) {
            double s = coupling.speaker_bias[r], l = 0.0;
            for (std::size_t j = 0; j < L; ++j) {
                s += coupling.speaker(r, j) * z(t, j);
                l += coupling.listener(r, j) * d.latent(t, j);
            }
            const double e = normal(rng);
            noise[r] = t == 0 ? p.noise_sigma * e : p.smoothing * noise[r] + innov * e;
            d.speaker_motion(t, r) = static_cast<float>(s);
            d.listener_motion(t, r) = static_cast<float>(l + noise[r]);
        }
    }

    const std::size_t S = p.image_size;
    d.frames = nn::Tensor<float>({p.T, p.channels, S, S});
    for (std::size_t t = 0; t < p.T; ++t) {
        const double cx = (0.5 + 0.3 * std::tanh(z(t, 0))) * static_cast<double>(S);
        const double cy = (0.5 + 0.3 * std::tanh(z(t, 1))) * static_cast<double>(S);
        const double sigma = (0.08 + 0.03 * std::tanh(z(t, 2))) * static_cast<double>(S);
        const double gain = 0.6 + 0.35 * std::tanh(z(t, 3));
        float* img = d.frames.ptr() + t * p.channels * S * S;
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - cx;
                const double dy = static_cast<double>(y) + 0.5 - cy;
                const float v = static_cast<float>(gain * std::exp(-(dx * dx + dy * dy) /
                                                                  (2.0 * sigma * sigma)));
                for (std::size_t c = 0; c < p.channels; ++c) img[(c * S + y) * S + x] = v;
            }
        }
    }

    const std::size_t n_samples = frame_to_sample(p.T);
    d.audio.resize(n_samples);
    double tone_phase[4];
    for (double& ph : tone_phase) ph = 2.0 * std::numbers::pi * unit(rng);
    for (std::size_t s = 0; s < n_samples; ++s) {
        // Latent sampled at the frame position of this audio sample.
        const double f = static_cast<double>(s) * kFrameRate / kSampleRate;
        const std::size_t t0 = std::min(static_cast<std::size_t>(f), p.T - 1);
        const std::size_t t1 = std::min(t0 + 1, p.T - 1);
        const double w = std::clamp(f - static_cast<double>(t0), 0.0, 1.0);
        double v = 1e-3 * normal(rng);
        for (std::size_t m = 0; m < 4; ++m) {
            const std::size_t j = kVideoDims + m;
            const double zj = (1.0 - w) * z(t0, j) + w * z(t1, j);
            const double a = 0.05 * std::exp(0.6 * zj);
            v += a * std::sin(2.0 * std::numbers::pi * kTones[m] * static_cast<double>(s) /
                                  kSampleRate +
                              tone_phase[m]);
        }
        d.audio[s] = static_cast<float>(v);
    }
    return d;
}

Split make_split(std::size_t n, std::uint64_t seed) {
    require(n >= 1, "split: no sequences");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng = stream_rng(seed, 0x5117u);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train,
                                static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
    Split s;
    s.train.assign(idx.begin(), idx.begin() + n_train);
    s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    s.test.assign(idx.begin() + n_train + n_val, idx.end());
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

std::size_t Corpus::audio_len() const { return frame_to_sample(T); }

Corpus generate_corpus(const CorpusParams& p) {
    require(p.sequences >= 1, "corpus: at least one sequence required");
    Corpus c;
    c.T = p.dyad.T;
    c.channels = p.dyad.channels;
    c.image_size = p.dyad.image_size;
    c.delay = p.dyad.delay;
    c.latent_dim = p.dyad.latent_dim;
    c.noise_sigma = p.dyad.noise_sigma;
    c.seed = p.seed;
    DyadParams dp = p.dyad;
    dp.coupling = make_coupling(p.seed, dp.latent_dim);
    std::mt19937_64 rng = stream_rng(p.seed, 0x5EEDu);
    for (std::size_t i = 0; i < p.sequences; ++i) {
        dp.seed = rng();
        c.seeds.push_back(dp.seed);
        c.sequences.push_back(generate_dyad(dp));
    }
    c.split = make_split(p.sequences, p.seed);
    return c;
}

namespace {

struct BlobSpec {
    std::string name;
    nn::Shape shape;
};

std::vector<BlobSpec> blob_specs(const Corpus& c, std::size_t n) {
    return {
        {"speaker_frames", {n, c.T, c.channels, c.image_size, c.image_size}},
        {"speaker_audio", {n, c.audio_len()}},
        {"speaker_motion", {n, c.T, kMotionDim}},
        {"listener_motion", {n, c.T, kMotionDim}},
    };
}

std::span<const float> field(const Dyad& d, const std::string& name) {
    if (name == "speaker_frames") return d.frames.data();
    if (name == "speaker_audio") return d.audio;
    if (name == "speaker_motion") return d.speaker_motion.data();
    return d.listener_motion.data();
}

} // namespace

fs::path write_dataset(const Corpus& c, const fs::path& dir, bool export_wav) {
    require(!c.sequences.empty(), "write_dataset: empty corpus");
    fs::create_directories(dir);
    nlohmann::json blobs = nlohmann::json::object();
    for (const auto& spec : blob_specs(c, c.size())) {
        const std::size_t per = nn::shape_size(spec.shape) / c.size();
        std::vector<float> flat;
        flat.reserve(per * c.size());
        for (const auto& d : c.sequences) {
            auto f = field(d, spec.name);
            require(f.size() == per, "write_dataset: sequence field " + spec.name +
                                         " has the wrong length");
            flat.insert(flat.end(), f.begin(), f.end());
        }
        const std::string file = spec.name + ".f32";
        io::write_f32(dir / file, flat);
        blobs[spec.name] = {{"path", file},
                            {"shape", spec.shape},
                            {"bytes", flat.size() * sizeof(float)}};
    }
    nlohmann::json j{
        {"version", kManifestVersion},
        {"sequences", c.size()},
        {"frames", c.T},
        {"channels", c.channels},
        {"image_size", c.image_size},
        {"audio_samples", c.audio_len()},
        {"sample_rate", kSampleRate},
        {"frame_rate", kFrameRate},
        {"delay", c.delay},
        {"latent_dim", c.latent_dim},
        {"noise_sigma", c.noise_sigma},
        {"seed", c.seed},
        {"sequence_seeds", c.seeds},
        {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
        {"blobs", blobs},
    };
    if (export_wav) {
        for (std::size_t i = 0; i < c.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "audio/seq_%04zu.wav", i);
            io::write_wav(dir / name, c.sequences[i].audio, kSampleRate);
        }
    }
    const fs::path manifest = dir / "manifest.json";
    io::write_bytes(manifest, j.dump(2) + "\n");
    return manifest;
}

Corpus read_dataset(const fs::path& manifest) {
    const nlohmann::json j = nlohmann::json::parse(io::read_bytes(manifest));
    const int version = j.at("version").get<int>();
    require(version == kManifestVersion, "dataset: unknown manifest version " +
                                             std::to_string(version));
    Corpus c;
    const std::size_t n = j.at("sequences").get<std::size_t>();
    c.T = j.at("frames").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.image_size = j.at("image_size").get<std::size_t>();
    c.delay = j.at("delay").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.seeds = j.at("sequence_seeds").get<std::vector<std::uint64_t>>();
    require(n >= 1 && c.seeds.size() == n, "dataset: sequence count mismatch");
    require(j.at("audio_samples").get<std::size_t>() == c.audio_len(),
            "dataset: audio length does not match the frame count");
    const auto& sp = j.at("split");
    c.split.train = sp.at("train").get<std::vector<std::size_t>>();
    c.split.val = sp.at("val").get<std::vector<std::size_t>>();
    c.split.test = sp.at("test").get<std::vector<std::size_t>>();
    for (const auto* v : {&c.split.train, &c.split.val, &c.split.test}) {
        for (std::size_t i : *v) require(i < n, "dataset: split index out of range");
    }

    const fs::path dir = manifest.parent_path();
    const auto specs = blob_specs(c, n);
    const auto& blobs = j.at("blobs");
    for (const auto& spec : specs) {
        require(blobs.contains(spec.name), "dataset: manifest lacks blob " + spec.name);
        const auto& b = blobs.at(spec.name);
        require(b.at("shape").get<nn::Shape>() == spec.shape,
                "dataset: blob " + spec.name + " declares shape " +
                    nn::shape_str(b.at("shape").get<nn::Shape>()) + ", expected " +
                    nn::shape_str(spec.shape));
        io::check_size(dir / b.at("path").get<std::string>(),
                       nn::shape_size(spec.shape) * sizeof(float), spec.name);
    }
    c.sequences.resize(n);
    for (const auto& spec : specs) {
        const std::vector<float> flat =
            io::read_f32(dir / blobs.at(spec.name).at("path").get<std::string>(),
                         nn::shape_size(spec.shape), spec.name);
        nn::Shape item(spec.shape.begin() + 1, spec.shape.end());
        const std::size_t per = nn::shape_size(item);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<float> part(flat.begin() + i * per, flat.begin() + (i + 1) * per);
            Dyad& d = c.sequences[i];
            if (spec.name == "speaker_frames") d.frames = nn::Tensor<float>(item, std::move(part));
            else if (spec.name == "speaker_audio") d.audio = std::move(part);
            else if (spec.name == "speaker_motion") d.speaker_motion = nn::Tensor<float>(item, std::move(part));
            else d.listener_motion = nn::Tensor<float>(item, std::move(part));
        }
    }
    return c;
}

} // namespace fad::synth
