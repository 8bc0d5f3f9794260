#include "fad/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "fad/io.hpp"
#include "fad/ops.hpp"

namespace fad {

LossTarget parse_loss_target(const std::string& s) {
    if (s == "epsilon") return LossTarget::epsilon;
    if (s == "velocity") return LossTarget::velocity;
    throw Error("unknown loss target '" + s + "' (expected epsilon|velocity)");
}

std::string to_string(LossTarget t) { return t == LossTarget::epsilon ? "epsilon" : "velocity"; }

void validate(const TrainConfig& c) {
    require(c.learning_rate > 0.0, "train: learning_rate must be positive");
    require(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0,
            "train: betas must lie in [0,1)");
    require(c.weight_decay >= 0.0, "train: weight_decay must be non-negative");
    require(c.eps > 0.0, "train: eps must be positive");
    require(c.epochs >= 1, "train: epochs must be >= 1");
    require(c.batch_size >= 1, "train: batch_size must be >= 1");
    require(c.window_stride >= 1, "train: window_stride must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"learning_rate", c.learning_rate}, {"beta1", c.beta1},
                       {"beta2", c.beta2},                 {"weight_decay", c.weight_decay},
                       {"eps", c.eps},                     {"epochs", c.epochs},
                       {"batch_size", c.batch_size},       {"seed", c.seed},
                       {"window_stride", c.window_stride}, {"max_steps", c.max_steps},
                       {"checkpoint_every", c.checkpoint_every},
                       {"loss", to_string(c.loss)}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.eps = j.value("eps", c.eps);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.window_stride = j.value("window_stride", c.window_stride);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("loss")) c.loss = parse_loss_target(j.at("loss").get<std::string>());
}

template <typename T>
void AdamState<T>::init(const std::vector<nn::Parameter<T>*>& params) {
    step = 0;
    m.clear();
    v.clear();
    for (const auto* p : params) {
        m.emplace_back(p->value.shape());
        v.emplace_back(p->value.shape());
    }
}

template <typename T>
void adamw_step(const std::vector<nn::Parameter<T>*>& params,
                const std::vector<std::string>& names, AdamState<T>& state,
                const TrainConfig& cfg) {
    require(state.m.size() == params.size() && state.v.size() == params.size(),
            "adamw: optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = params[i]->grad;
        require(g.shape() == params[i]->value.shape(), "adamw: gradient shape mismatch for " +
                                                           (i < names.size() ? names[i] : "?"));
        if (!g.all_finite()) {
            throw Error("non-finite gradient in parameter " +
                        (i < names.size() ? names[i] : std::to_string(i)));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        T* p = params[i]->value.ptr();
        const T* g = params[i]->grad.ptr();
        T* m = state.m[i].ptr();
        T* v = state.v[i].ptr();
        for (std::size_t j = 0; j < params[i]->value.size(); ++j) {
            const double gj = g[j];
            const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            const double pj = static_cast<double>(p[j]) * decay;
            p[j] = static_cast<T>(pj - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adamw_step(const std::vector<nn::Parameter<float>*>&,
                         const std::vector<std::string>&, AdamState<float>&, const TrainConfig&);
template void adamw_step(const std::vector<nn::Parameter<double>*>&,
                         const std::vector<std::string>&, AdamState<double>&, const TrainConfig&);

std::vector<std::size_t> sample_timesteps(std::mt19937_64& rng, std::size_t n, std::size_t K) {
    std::uniform_int_distribution<std::size_t> dist(1, K);
    std::vector<std::size_t> ks(n);
    for (auto& k : ks) k = dist(rng);
    return ks;
}

TrainingSet make_training_set(const synth::Corpus& corpus, const std::vector<std::size_t>& seqs,
                              std::size_t clip_len, std::size_t stride, const MelConfig& mel_cfg) {
    require(clip_len >= 1 && stride >= 1, "training set: bad clip length or stride");
    require(corpus.T >= 2 * clip_len, "training set: sequences shorter than two clips");
    TrainingSet ts;
    ts.corpus = &corpus;
    ts.clip_len = clip_len;
    MelSpectrogram mel(mel_cfg);
    for (std::size_t s : seqs) {
        require(s < corpus.size(), "training set: sequence index out of range");
        const auto& audio = corpus.sequences[s].audio;
        for (std::size_t o = 0; o + 2 * clip_len <= corpus.T; o += stride) {
            ts.windows.push_back({s, o});
            const std::size_t a = frame_to_sample(o);
            const std::size_t b = std::min(frame_to_sample(o + clip_len), audio.size());
            ts.log_mel.push_back(
                mel.compute(std::span<const float>(audio.data() + a, b - a), clip_len));
        }
    }
    require(!ts.windows.empty(), "empty dataset: no training windows");
    return ts;
}

std::string loss_trace_csv(const std::vector<LossRow>& rows) {
    std::ostringstream os;
    os.precision(9);
    os << "step,loss,wall_ms\n";
    for (const auto& r : rows) os << r.step << ',' << r.loss << ',' << r.wall_ms << '\n';
    return os.str();
}

namespace {

constexpr std::uint64_t kStepStreams = 1ull << 32;
constexpr std::uint64_t kEpochStreams = 2ull << 32;

} // namespace

Trainer::Trainer(ListenerModel& model, const TrainConfig& cfg, const TrainingSet& data)
    : model_(model), cfg_(cfg), data_(data) {
    validate(cfg_);
    require(data_.size() > 0, "empty dataset");
    require(cfg_.loss == LossTarget::epsilon ||
                model_.config().elnet.prediction == Prediction::v,
            "train: the velocity loss needs elnet.prediction = v");
    require(data_.clip_len == model_.config().clip_len,
            "training set clip length differs from the model's");
    auto& store = model_.parameters();
    for (std::size_t i = 0; i < store.size(); ++i) names_.push_back(store.name(i));
    params_ = store.pointers();
    adam_.init(params_);
    model_.audio_norm() = AudioNormalizer::fit(data_.log_mel);
}

std::size_t Trainer::steps_per_epoch() const {
    return std::max<std::size_t>(1, data_.size() / cfg_.batch_size);
}

std::size_t Trainer::total_steps() const {
    const std::size_t full = cfg_.epochs * steps_per_epoch();
    return cfg_.max_steps ? std::min(full, cfg_.max_steps) : full;
}

Trainer::Batch Trainer::batch_for(std::size_t step) {
    const std::size_t epoch = step / steps_per_epoch();
    const std::size_t pos = step % steps_per_epoch();
    if (epoch != cached_epoch_) {
        order_.resize(data_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        std::mt19937_64 rng = stream_rng(cfg_.seed, kEpochStreams + epoch);
        std::shuffle(order_.begin(), order_.end(), rng);
        cached_epoch_ = epoch;
    }
    const std::size_t bs = std::min(cfg_.batch_size, data_.size());
    Batch b;
    for (std::size_t i = pos * bs; i < (pos + 1) * bs; ++i) {
        b.window_ids.push_back(order_[i]);
        b.windows.push_back(data_.windows[order_[i]]);
    }
    return b;
}

double Trainer::forward_backward(const Batch& b, std::size_t step, bool backward) {
    const ModelConfig& mc = model_.config();
    const synth::Corpus& corpus = *data_.corpus;
    const std::size_t n = b.windows.size();
    const std::size_t l = mc.clip_len;
    const std::size_t dv = mc.visual.output_dim();
    const std::size_t da = mc.mel.n_mels;

    nn::Graph<float> g(backward ? nn::GradMode::enabled : nn::GradMode::disabled);

    nn::Var<float> video;
    if (model_.uses_video()) {
        // Overlapping windows share frames; encode each distinct frame once.
        std::map<std::pair<std::size_t, std::size_t>, std::size_t> slot;
        std::vector<std::size_t> rows;
        std::vector<std::pair<std::size_t, std::size_t>> keys;
        for (const auto& w : b.windows) {
            for (std::size_t j = 0; j < l; ++j) {
                const auto key = std::make_pair(w.seq, w.offset + j);
                auto [it, fresh] = slot.emplace(key, keys.size());
                if (fresh) keys.push_back(key);
                rows.push_back(it->second);
            }
        }
        const nn::Tensor<float>& first = corpus.sequences[keys[0].first].frames;
        const std::size_t frame_size = first.size() / first.dim(0);
        nn::Shape shape = first.shape();
        shape[0] = keys.size();
        nn::Tensor<float> frames(shape);
        for (std::size_t u = 0; u < keys.size(); ++u) {
            const auto& src = corpus.sequences[keys[u].first].frames;
            std::copy_n(src.ptr() + keys[u].second * frame_size, frame_size,
                        frames.ptr() + u * frame_size);
        }
        video = nn::gather_rows(model_.visual().forward(g, g.constant(std::move(frames))), rows);
    } else {
        video = g.constant(nn::Tensor<float>({n * l, dv}));
    }

    nn::Tensor<float> audio({n * l, da});
    if (model_.uses_audio()) {
        for (std::size_t i = 0; i < n; ++i) {
            const nn::Tensor<float> a = model_.audio_features(data_.log_mel[b.window_ids[i]]);
            std::copy(a.storage().begin(), a.storage().end(), audio.ptr() + i * l * da);
        }
    }
    nn::Var<float> cond =
        nn::reshape(fuse(video, g.constant(std::move(audio)), mc.modality), {n, l, dv + da});

    std::mt19937_64 rng = stream_rng(cfg_.seed, kStepStreams + step);
    const std::vector<std::size_t> ks = sample_timesteps(rng, n, mc.K);
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool velocity = cfg_.loss == LossTarget::velocity;
    nn::Tensor<float> target({n, l, kMotionDim});
    nn::Tensor<float> xk({n, l, kMotionDim});
    const std::size_t item = l * kMotionDim;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& w = b.windows[i];
        const float* x0 = corpus.sequences[w.seq].listener_motion.ptr() + (w.offset + l) * kMotionDim;
        const double ab = model_.schedule().alpha_bar(ks[i]);
        const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
        for (std::size_t j = 0; j < item; ++j) {
            const double e = normal(rng);
            target[i * item + j] = static_cast<float>(velocity ? sa * e - sn * x0[j] : e);
            xk[i * item + j] = static_cast<float>(sa * x0[j] + sn * e);
        }
    }
    nn::Var<float> x = g.constant(std::move(xk));
    nn::Var<float> pred = velocity ? model_.elnet().forward_head(g, x, ks, cond)
                                   : model_.elnet().forward(g, x, ks, cond);
    nn::Var<float> loss = nn::mse(pred, g.constant(std::move(target)));
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
        throw Error("non-finite loss at step " + std::to_string(step) + " (epoch " +
                    std::to_string(step / steps_per_epoch()) + ", batch of " +
                    std::to_string(n) + "); lower the learning rate or inspect the data");
    }
    if (backward) {
        model_.parameters().zero_grad();
        g.backward(loss);
    }
    return value;
}

double Trainer::batch_loss(std::size_t step) {
    return forward_backward(batch_for(step), step, false);
}

double Trainer::train_step() {
    const std::size_t s = adam_.step;
    const double loss = forward_backward(batch_for(s), s, true);
    adamw_step(params_, names_, adam_, cfg_);
    return loss;
}

std::vector<LossRow> Trainer::run(const std::function<void(const LossRow&)>& on_step) {
    std::vector<LossRow> rows;
    const auto t0 = std::chrono::steady_clock::now();
    while (adam_.step < total_steps()) {
        LossRow r;
        r.step = adam_.step;
        r.loss = train_step();
        r.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back(r);
        if (on_step) on_step(r);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'F', 'A', 'D', 'C', 'K', 'P', 'T', '1'};

struct Parsed {
    nlohmann::json header;
    std::string blob;
};

Parsed parse_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = io::read_bytes(path);
    require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 8) == 0,
            path.string() + ": not a checkpoint file");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 8);
    require(16 + len <= bytes.size(), path.string() + ": truncated checkpoint header");
    Parsed p;
    p.header = nlohmann::json::parse(bytes.substr(16, len));
    const int version = p.header.at("version").get<int>();
    require(version == kCheckpointVersion,
            "checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));
    p.blob = bytes.substr(16 + len);
    require(p.blob.size() == p.header.at("blob_floats").get<std::size_t>() * sizeof(float),
            path.string() + ": blob size does not match the header");
    return p;
}

void copy_out(const std::string& blob, std::size_t offset, std::span<float> dst) {
    require((offset + dst.size()) * sizeof(float) <= blob.size(), "checkpoint: offset out of range");
    std::memcpy(dst.data(), blob.data() + offset * sizeof(float), dst.size_bytes());
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const ListenerModel& model,
                     const TrainConfig& train, const AdamState<float>& adam) {
    const auto& store = model.parameters();
    std::vector<float> blob;
    auto append = [&](std::span<const float> d) {
        const std::size_t at = blob.size();
        blob.insert(blob.end(), d.begin(), d.end());
        return at;
    };
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& v = store.at(i).value;
        require(v.all_finite(), "checkpoint: parameter " + store.name(i) + " is not finite");
        params.push_back({{"name", store.name(i)}, {"shape", v.shape()}, {"offset", append(v.data())}});
    }
    const auto& norm = model.audio_norm();
    nlohmann::json audio{{"bins", norm.mean.size()},
                         {"mean_offset", append(norm.mean)},
                         {"inv_std_offset", append(norm.inv_std)}};
    nlohmann::json opt{{"step", adam.step}};
    if (!adam.m.empty()) {
        require(adam.m.size() == store.size(), "checkpoint: optimizer state does not match");
        std::vector<std::size_t> mo, vo;
        for (const auto& t : adam.m) mo.push_back(append(t.data()));
        for (const auto& t : adam.v) vo.push_back(append(t.data()));
        opt["m_offsets"] = mo;
        opt["v_offsets"] = vo;
    }
    nlohmann::json header{{"version", kCheckpointVersion},
                          {"model", model.config()},
                          {"train", train},
                          {"parameters", params},
                          {"audio_norm", audio},
                          {"optimizer", opt},
                          {"blob_floats", blob.size()}};
    const std::string h = header.dump();
    std::string bytes(kMagic, 8);
    const std::uint64_t len = h.size();
    bytes.append(reinterpret_cast<const char*>(&len), 8);
    bytes += h;
    bytes.append(reinterpret_cast<const char*>(blob.data()), blob.size() * sizeof(float));
    io::write_bytes(path, bytes);
}

LoadedConfig read_checkpoint_config(const std::filesystem::path& path) {
    const Parsed p = parse_checkpoint(path);
    LoadedConfig c;
    c.model = p.header.at("model").get<ModelConfig>();
    c.train = p.header.at("train").get<TrainConfig>();
    return c;
}

void load_checkpoint(const std::filesystem::path& path, ListenerModel& model,
                     AdamState<float>* adam) {
    const Parsed p = parse_checkpoint(path);
    auto& store = model.parameters();
    const auto& params = p.header.at("parameters");
    require(params.size() == store.size(),
            "checkpoint shape mismatch: " + std::to_string(params.size()) +
                " parameters in file, model has " + std::to_string(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = params[i];
        const std::string name = e.at("name").get<std::string>();
        require(name == store.name(i), "checkpoint shape mismatch: parameter " +
                                           std::to_string(i) + " is " + name + ", model has " +
                                           store.name(i));
        const nn::Shape shape = e.at("shape").get<nn::Shape>();
        require(shape == store.at(i).value.shape(),
                "checkpoint shape mismatch for " + name + ": file " + nn::shape_str(shape) +
                    ", model " + nn::shape_str(store.at(i).value.shape()));
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
        copy_out(p.blob, params[i].at("offset").get<std::size_t>(), store.at(i).value.data());
        store.at(i).zero_grad();
    }
    const auto& audio = p.header.at("audio_norm");
    AudioNormalizer norm;
    norm.mean.resize(audio.at("bins").get<std::size_t>());
    norm.inv_std.resize(norm.mean.size());
    require(norm.mean.size() == model.config().mel.n_mels, "checkpoint shape mismatch: mel bins");
    copy_out(p.blob, audio.at("mean_offset").get<std::size_t>(), norm.mean);
    copy_out(p.blob, audio.at("inv_std_offset").get<std::size_t>(), norm.inv_std);
    model.audio_norm() = std::move(norm);

    if (adam) {
        const auto& opt = p.header.at("optimizer");
        adam->init(store.pointers());
        adam->step = opt.at("step").get<std::uint64_t>();
        if (opt.contains("m_offsets")) {
            const auto mo = opt.at("m_offsets").get<std::vector<std::size_t>>();
            const auto vo = opt.at("v_offsets").get<std::vector<std::size_t>>();
            require(mo.size() == store.size() && vo.size() == store.size(),
                    "checkpoint: optimizer state does not match the model");
            for (std::size_t i = 0; i < store.size(); ++i) {
                copy_out(p.blob, mo[i], adam->m[i].data());
                copy_out(p.blob, vo[i], adam->v[i].data());
            }
        }
    }
}

} // namespace fad
