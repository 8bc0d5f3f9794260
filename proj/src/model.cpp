#include "fad/model.hpp"

namespace fad {

void validate(const ModelConfig& cfg) {
    validate(cfg.mel);
    validate(cfg.visual);
    validate(cfg.elnet);
    require(cfg.K >= 1, "config: K must be >= 1");
    require(cfg.clip_len >= 1, "config: clip length must be positive");
    require(cfg.elnet.clip_len == cfg.clip_len,
            "config: elnet clip length " + std::to_string(cfg.elnet.clip_len) +
                " differs from clip length " + std::to_string(cfg.clip_len));
    require(cfg.elnet.motion_dim == kMotionDim,
            "config: motion width must be " + std::to_string(kMotionDim));
    require(cfg.elnet.cond_dim == cfg.visual.output_dim() + cfg.mel.n_mels,
            "config: condition width " + std::to_string(cfg.elnet.cond_dim) +
                " != d_v + d_a = " + std::to_string(cfg.visual.output_dim()) + " + " +
                std::to_string(cfg.mel.n_mels));
    require(cfg.mel.sample_rate == kSampleRate, "config: audio must be 16 kHz");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{
        {"clip_len", c.clip_len},
        {"K", c.K},
        {"schedule", to_string(c.schedule)},
        {"modality", to_string(c.modality)},
        {"init_seed", c.init_seed},
        {"mel",
         {{"sample_rate", c.mel.sample_rate},
          {"n_mels", c.mel.n_mels},
          {"fft_size", c.mel.fft_size},
          {"fmin", c.mel.fmin},
          {"fmax", c.mel.fmax},
          {"log_floor", c.mel.log_floor}}},
        {"visual",
         {{"image_size", c.visual.image_size},
          {"in_channels", c.visual.in_channels},
          {"widths", c.visual.widths},
          {"head_channels", c.visual.head_channels},
          {"kernel", c.visual.kernel},
          {"temperature", c.visual.temperature}}},
        {"elnet",
         {{"motion_dim", c.elnet.motion_dim},
          {"cond_dim", c.elnet.cond_dim},
          {"base_width", c.elnet.base_width},
          {"depth", c.elnet.depth},
          {"groups", c.elnet.groups},
          {"time_embed_dim", c.elnet.time_embed_dim},
          {"kernel", c.elnet.kernel},
          {"blocks_per_stage", c.elnet.blocks_per_stage},
          {"prediction", to_string(c.elnet.prediction)},
          {"use_skips", c.elnet.use_skips}}},
    };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.clip_len = j.value("clip_len", c.clip_len);
    c.K = j.value("K", c.K);
    if (j.contains("schedule")) c.schedule = parse_schedule_kind(j.at("schedule"));
    if (j.contains("modality")) c.modality = parse_modality(j.at("modality"));
    c.init_seed = j.value("init_seed", c.init_seed);
    if (j.contains("mel")) {
        const auto& m = j.at("mel");
        c.mel.sample_rate = m.value("sample_rate", c.mel.sample_rate);
        c.mel.n_mels = m.value("n_mels", c.mel.n_mels);
        c.mel.fft_size = m.value("fft_size", c.mel.fft_size);
        c.mel.fmin = m.value("fmin", c.mel.fmin);
        c.mel.fmax = m.value("fmax", c.mel.fmax);
        c.mel.log_floor = m.value("log_floor", c.mel.log_floor);
    }
    if (j.contains("visual")) {
        const auto& v = j.at("visual");
        c.visual.image_size = v.value("image_size", c.visual.image_size);
        c.visual.in_channels = v.value("in_channels", c.visual.in_channels);
        c.visual.widths = v.value("widths", c.visual.widths);
        c.visual.head_channels = v.value("head_channels", c.visual.head_channels);
        c.visual.kernel = v.value("kernel", c.visual.kernel);
        c.visual.temperature = v.value("temperature", c.visual.temperature);
    }
    if (j.contains("elnet")) {
        const auto& e = j.at("elnet");
        c.elnet.motion_dim = e.value("motion_dim", c.elnet.motion_dim);
        c.elnet.cond_dim = e.value("cond_dim", c.elnet.cond_dim);
        c.elnet.base_width = e.value("base_width", c.elnet.base_width);
        c.elnet.depth = e.value("depth", c.elnet.depth);
        c.elnet.groups = e.value("groups", c.elnet.groups);
        c.elnet.time_embed_dim = e.value("time_embed_dim", c.elnet.time_embed_dim);
        c.elnet.kernel = e.value("kernel", c.elnet.kernel);
        c.elnet.blocks_per_stage = e.value("blocks_per_stage", c.elnet.blocks_per_stage);
        if (e.contains("prediction")) c.elnet.prediction = parse_prediction(e.at("prediction"));
        c.elnet.use_skips = e.value("use_skips", c.elnet.use_skips);
    }
    c.elnet.clip_len = c.clip_len;
}

ListenerModel::ListenerModel(const ModelConfig& cfg) : cfg_(cfg) {
    validate(cfg_);
    sched_ = make_schedule(cfg_.K, cfg_.schedule);
    std::mt19937_64 rng(cfg_.init_seed);
    visual_ = std::make_unique<VisualEncoder<float>>(cfg_.visual, store_, rng);
    elnet_ = std::make_unique<ELNet<float>>(cfg_.elnet, sched_, store_, rng);
    audio_norm_ = AudioNormalizer::identity(cfg_.mel.n_mels);
}

nn::Tensor<float> ListenerModel::audio_features(const nn::Tensor<float>& log_mel) const {
    return audio_norm_.apply(log_mel);
}

nn::Tensor<float> ListenerModel::condition(const Clip& clip, MelSpectrogram& mel) const {
    const std::size_t l = cfg_.clip_len;
    require(clip.video.rank() == 4 && clip.video.dim(0) == l,
            "clip must hold " + std::to_string(l) + " frames");
    nn::Tensor<float> video({l, cfg_.visual.output_dim()});
    nn::Tensor<float> audio({l, cfg_.mel.n_mels});
    if (uses_video()) video = encode_visual(*visual_, clip.video);
    if (uses_audio()) audio = audio_features(mel.compute(clip.audio, l));
    return fuse(video, audio, cfg_.modality);
}

DenoiserFn ListenerModel::denoiser(std::size_t* calls) const {
    const ELNet<float>* net = elnet_.get();
    return [net, calls](const nn::Tensor<double>& xk, std::size_t k,
                        const nn::Tensor<double>& cond) {
        if (calls) ++*calls;
        nn::Graph<float> g(nn::GradMode::disabled);
        const std::vector<std::size_t> ks(xk.dim(0), k);
        nn::Var<float> out =
            net->forward(g, g.constant(xk.cast<float>()), ks, g.constant(cond.cast<float>()));
        return out.value().cast<double>();
    };
}

} // namespace fad
