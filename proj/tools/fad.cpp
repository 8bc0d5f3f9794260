// fad: dataset generation, training, streaming generation, evaluation and
// latency benchmarking for the listener-motion diffusion model.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fad/experiment.hpp"
#include "fad/io.hpp"
#include "fad/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fad;

namespace {

constexpr int kGeneratedVersion = 1;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("FAD_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw Error(std::string("FAD_SEED is not an unsigned integer: ") + env);
        }
    }
    return 0;
}

json read_json(const fs::path& p) {
    try {
        return json::parse(io::read_bytes(p));
    } catch (const json::exception& e) {
        throw Error(p.string() + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& text) { io::write_bytes(p, text); }

std::vector<std::size_t> select_split(const synth::Corpus& c, const std::string& split) {
    if (split == "train") return c.split.train;
    if (split == "val") return c.split.val;
    if (split == "test") return c.split.test;
    if (split == "all") {
        std::vector<std::size_t> all(c.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    throw Error("unknown split '" + split + "' (expected train|val|test|all)");
}

std::vector<std::size_t> parse_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        require(!item.empty(), "empty entry in list '" + s + "'");
        out.push_back(std::stoul(item));
    }
    require(!out.empty(), "empty list");
    return out;
}

std::uint64_t as_int(double flops) { return static_cast<std::uint64_t>(std::llround(flops)); }

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string out;
    std::size_t sequences = 100;
    std::size_t frames = 64;
    std::size_t delay = 4;
    std::optional<std::uint64_t> seed;
    double noise_sigma = 0.02;
    std::size_t latent_dim = 8;
    std::size_t channels = 1;
    bool wav = false;
};

int cmd_gen_data(const GenDataArgs& a) {
    synth::CorpusParams p;
    p.seed = a.seed.value_or(default_seed());
    p.sequences = a.sequences;
    p.dyad.T = a.frames;
    p.dyad.delay = a.delay;
    p.dyad.noise_sigma = a.noise_sigma;
    p.dyad.latent_dim = a.latent_dim;
    p.dyad.channels = a.channels;
    const synth::Corpus c = synth::generate_corpus(p);
    std::cout << synth::write_dataset(c, a.out, a.wav).string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, data, out, resume;
    std::optional<std::string> modality;
    std::optional<std::size_t> epochs, batch_size, max_steps, window_stride, checkpoint_every;
    std::optional<double> lr, weight_decay;
    std::optional<std::uint64_t> seed;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    if (!path.empty()) {
        const json j = read_json(path);
        if (j.contains("model")) rc.model = j.at("model").get<ModelConfig>();
        if (j.contains("train")) rc.train = j.at("train").get<TrainConfig>();
    }
    return rc;
}

int cmd_train(const TrainArgs& a) {
    require(!a.data.empty(), "train: --data is required");
    require(fs::exists(a.data), "train: data manifest not found: " + a.data);
    RunConfig rc = load_run_config(a.config);
    if (!a.config.empty() && !read_json(a.config).contains("train") &&
        !read_json(a.config).contains("model")) {
        throw Error("config " + a.config + " has neither a 'model' nor a 'train' section");
    }
    rc.train.seed = a.seed.value_or(a.config.empty() ? default_seed() : rc.train.seed);
    if (a.modality) rc.model.modality = parse_modality(*a.modality);
    if (a.epochs) rc.train.epochs = *a.epochs;
    if (a.batch_size) rc.train.batch_size = *a.batch_size;
    if (a.max_steps) rc.train.max_steps = *a.max_steps;
    if (a.window_stride) rc.train.window_stride = *a.window_stride;
    if (a.checkpoint_every) rc.train.checkpoint_every = *a.checkpoint_every;
    if (a.lr) rc.train.learning_rate = *a.lr;
    if (a.weight_decay) rc.train.weight_decay = *a.weight_decay;
    rc.model.init_seed = rc.train.seed;
    validate(rc.model);
    validate(rc.train);

    const synth::Corpus corpus = synth::read_dataset(a.data);
    ListenerModel model(rc.model);
    const TrainingSet data = make_training_set(corpus, corpus.split.train, rc.model.clip_len,
                                               rc.train.window_stride, rc.model.mel);
    Trainer trainer(model, rc.train, data);
    if (!a.resume.empty()) load_checkpoint(a.resume, model, &trainer.adam());

    const fs::path out(a.out);
    fs::create_directories(out);
    write_text(out / "config.json",
               json{{"model", rc.model}, {"train", rc.train}}.dump(2) + "\n");
    std::vector<LossRow> trace;
    trainer.run([&](const LossRow& r) {
        trace.push_back(r);
        const std::size_t done = r.step + 1;
        if (rc.train.checkpoint_every && done % rc.train.checkpoint_every == 0) {
            save_checkpoint(out / ("checkpoint_step" + std::to_string(done) + ".bin"), model,
                            rc.train, trainer.adam());
        }
    });
    write_text(out / "loss_trace.csv", loss_trace_csv(trace));
    const fs::path ckpt = out / "checkpoint.bin";
    save_checkpoint(ckpt, model, rc.train, trainer.adam());
    std::cout << ckpt.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string checkpoint, input, out, split = "test";
    std::size_t steps = 1;
    std::optional<std::uint64_t> seed;
};

std::unique_ptr<ListenerModel> load_model(const std::string& ckpt) {
    require(!ckpt.empty(), "--checkpoint is required");
    const LoadedConfig cfg = read_checkpoint_config(ckpt);
    auto model = std::make_unique<ListenerModel>(cfg.model);
    load_checkpoint(ckpt, *model);
    return model;
}

int cmd_generate(const GenerateArgs& a) {
    require(!a.input.empty(), "generate: --input-manifest is required");
    auto model = load_model(a.checkpoint);
    const std::uint64_t seed = a.seed.value_or(default_seed());
    const json in = read_json(a.input);
    const fs::path out(a.out);
    fs::create_directories(out);

    std::vector<std::vector<ClipLatency>> latency;
    std::vector<nn::Tensor<float>> motion;
    std::vector<std::size_t> seqs;
    std::size_t first_frame = 0;
    if (in.contains("frames") && in.contains("shape")) {
        const io::Stream s = io::read_stream(a.input);
        StreamOutput o = generate_stream(*model, s.video, s.audio, a.steps, seed);
        first_frame = o.first_frame;
        motion.push_back(std::move(o.motion));
        latency.push_back(std::move(o.latency));
        seqs.push_back(0);
    } else {
        const synth::Corpus corpus = synth::read_dataset(a.input);
        seqs = select_split(corpus, a.split);
        for (std::size_t s : seqs) {
            const auto& d = corpus.sequences[s];
            StreamOutput o = generate_stream(*model, d.frames, d.audio, a.steps, seed,
                                             static_cast<std::uint64_t>(s) << 16);
            first_frame = o.first_frame;
            motion.push_back(std::move(o.motion));
            latency.push_back(std::move(o.latency));
        }
    }

    std::vector<float> flat;
    for (const auto& m : motion) flat.insert(flat.end(), m.storage().begin(), m.storage().end());
    io::write_f32(out / "listener_pred.f32", flat);
    std::ostringstream csv;
    csv.precision(6);
    csv << std::fixed << "sequence,clip,encode_ms,denoise_ms,total_ms,denoiser_calls\n";
    for (std::size_t i = 0; i < latency.size(); ++i) {
        for (const auto& l : latency[i]) {
            csv << seqs[i] << ',' << l.clip << ',' << l.encode_ms << ',' << l.denoise_ms << ','
                << l.total_ms() << ',' << l.denoiser_calls << '\n';
        }
    }
    write_text(out / "latency.csv", csv.str());
    const std::size_t rows = motion.front().dim(0);
    const json meta{{"version", kGeneratedVersion},
                    {"input", fs::absolute(a.input).string()},
                    {"checkpoint", fs::absolute(a.checkpoint).string()},
                    {"split", a.split},
                    {"sequences", seqs},
                    {"first_frame", first_frame},
                    {"steps", a.steps},
                    {"seed", seed},
                    {"blob", "listener_pred.f32"},
                    {"shape", {motion.size(), rows, kMotionDim}}};
    write_text(out / "generated.json", meta.dump(2) + "\n");
    std::cout << (out / "generated.json").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string pred, gt, train_data, out;
    std::size_t kmeans_k = 16;
    std::size_t max_lag = 30;
    std::string split = "test";
    std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalArgs& a) {
    require(!a.pred.empty() && !a.out.empty(), "eval: --pred and --out are required");
    const json pj = read_json(a.pred);
    std::string gt_path = a.gt;
    CorpusPrediction pred;
    std::optional<synth::Corpus> pred_corpus;
    if (pj.contains("blob")) {
        require(pj.at("version").get<int>() == kGeneratedVersion,
                "eval: unknown generated.json version");
        if (gt_path.empty()) gt_path = pj.at("input").get<std::string>();
        const auto shape = pj.at("shape").get<nn::Shape>();
        require(shape.size() == 3 && shape[2] == kMotionDim, "eval: prediction shape must be [N,T,56]");
        const auto flat = io::read_f32(fs::path(a.pred).parent_path() / pj.at("blob").get<std::string>(),
                                       nn::shape_size(shape), "listener_pred");
        pred.seqs = pj.at("sequences").get<std::vector<std::size_t>>();
        require(pred.seqs.size() == shape[0], "eval: sequence list does not match the blob");
        pred.first_frame = pj.at("first_frame").get<std::size_t>();
        const std::size_t per = shape[1] * shape[2];
        for (std::size_t i = 0; i < shape[0]; ++i) {
            pred.motion.emplace_back(nn::Shape{shape[1], shape[2]},
                                     std::vector<float>(flat.begin() + i * per,
                                                        flat.begin() + (i + 1) * per));
        }
    } else {
        // A dataset manifest: its listener motion is scored as the prediction.
        pred_corpus = synth::read_dataset(a.pred);
        if (gt_path.empty()) gt_path = a.pred;
    }
    require(!gt_path.empty(), "eval: --gt is required");
    const synth::Corpus gt = synth::read_dataset(gt_path);
    if (pred_corpus) {
        require(pred_corpus->T == gt.T && pred_corpus->size() == gt.size(),
                "eval: prediction corpus does not match the ground truth");
        pred.seqs = select_split(gt, a.split);
        pred.first_frame = 0;
        for (std::size_t s : pred.seqs) pred.motion.push_back(pred_corpus->sequences[s].listener_motion);
    }
    for (std::size_t s : pred.seqs) require(s < gt.size(), "eval: sequence index out of range");

    EvalOptions opt;
    opt.kmeans_k = a.kmeans_k;
    opt.max_lag = a.max_lag;
    opt.seed = a.seed.value_or(default_seed());
    // Baselines search the training split; predictions are scored against gt.
    std::vector<std::size_t> train_idx = gt.split.train;
    std::optional<synth::Corpus> merged;
    if (!a.train_data.empty() && fs::absolute(a.train_data) != fs::absolute(gt_path)) {
        const synth::Corpus train_src = synth::read_dataset(a.train_data);
        require(train_src.T == gt.T, "eval: training data frame count differs from ground truth");
        merged = gt;
        train_idx.clear();
        for (std::size_t s : train_src.split.train) {
            train_idx.push_back(merged->sequences.size());
            merged->sequences.push_back(train_src.sequences[s]);
        }
    }
    const auto reports = evaluate_corpus(merged ? *merged : gt, train_idx, pred, opt);
    const fs::path out(a.out);
    fs::create_directories(out);
    write_text(out / "metrics.csv", eval::reports_csv(reports));
    write_text(out / "metrics.json", eval::reports_json(reports));
    std::cout << eval::reports_csv(reports);
    return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string checkpoint, data, out;
    std::string steps_list = "1,5,10";
    std::size_t repeats = 20;
    std::size_t warmup = 3;
    std::optional<std::uint64_t> seed;
};

int cmd_bench(const BenchArgs& a) {
    require(a.warmup >= 3, "bench: at least 3 warm-up runs are required");
    require(a.repeats >= 1, "bench: --repeats must be positive");
    auto model = load_model(a.checkpoint);
    const ModelConfig& mc = model->config();
    const std::uint64_t seed = a.seed.value_or(default_seed());
    const std::vector<std::size_t> steps = parse_list(a.steps_list);

    std::optional<synth::Corpus> corpus;
    Clip clip;
    if (!a.data.empty()) {
        corpus = synth::read_dataset(a.data);
        const auto& d = corpus->sequences.at(corpus->split.test.empty() ? 0 : corpus->split.test[0]);
        clip = segment_clips(d.frames, d.audio, mc.clip_len).clips.at(0);
    } else {
        synth::DyadParams p;
        p.seed = seed;
        p.T = std::max<std::size_t>(2 * mc.clip_len, 16);
        p.image_size = mc.visual.image_size;
        p.channels = mc.visual.in_channels;
        const synth::Dyad d = synth::generate_dyad(p);
        clip = segment_clips(d.frames, d.audio, mc.clip_len).clips.at(0);
    }

    MelSpectrogram mel(mc.mel);
    std::ostringstream csv;
    csv.precision(6);
    csv << std::fixed
        << "steps,repeats,median_ms,p95_ms,encode_median_ms,denoise_median_ms,denoiser_calls,"
           "flops_encoders,flops_denoiser_pass,flops_total,heldout_expr_l2,heldout_expr_si\n";
    for (std::size_t S : steps) {
        std::vector<double> total, enc, den;
        std::size_t calls = 0;
        for (std::size_t r = 0; r < a.warmup + a.repeats; ++r) {
            ClipLatency t;
            infer_clip(*model, clip, mel, S, seed, r, &t);
            calls = t.denoiser_calls;
            if (r < a.warmup) continue;
            total.push_back(t.total_ms());
            enc.push_back(t.encode_ms);
            den.push_back(t.denoise_ms);
        }
        const FlopCount fc = count_flops(mc.elnet, mc.visual, mc.mel, S);
        std::string l2 = "", si = "";
        if (corpus) {
            const CorpusPrediction p = predict_corpus(*model, *corpus, corpus->split.test, S, seed);
            EvalOptions opt;
            opt.baselines = false;
            opt.seed = seed;
            opt.mel = mc.mel;
            const auto rep = evaluate_corpus(*corpus, corpus->split.train, p, opt).front();
            l2 = std::to_string(rep.expression.l2);
            si = std::to_string(rep.expression.si);
        }
        csv << S << ',' << a.repeats << ',' << percentile(total, 0.5) << ','
            << percentile(total, 0.95) << ',' << percentile(enc, 0.5) << ','
            << percentile(den, 0.5) << ',' << calls << ',' << as_int(fc.encoders()) << ','
            << as_int(fc.denoiser_pass) << ',' << as_int(fc.total()) << ',' << l2 << ',' << si
            << '\n';
    }
    if (!a.out.empty()) write_text(a.out, csv.str());
    std::cout << csv.str();
    return 0;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Listener facial-motion diffusion: data, training, generation, evaluation, benchmark"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dyad corpus");
    gen->add_option("--out", gd.out, "Output directory")->required();
    gen->add_option("--sequences", gd.sequences, "Number of sequences")->capture_default_str();
    gen->add_option("--frames", gd.frames, "Frames per sequence (T)")->capture_default_str();
    gen->add_option("--delay", gd.delay, "Listener reaction delay in frames")->capture_default_str();
    gen->add_option("--seed", gd.seed, "Corpus seed (default: $FAD_SEED or 0)");
    gen->add_option("--noise-sigma", gd.noise_sigma, "Listener noise level")->capture_default_str();
    gen->add_option("--latent-dim", gd.latent_dim, "Latent dimension")->capture_default_str();
    gen->add_option("--channels", gd.channels, "Image channels")->capture_default_str();
    gen->add_flag("--wav", gd.wav, "Also export per-sequence 16-bit WAV audio");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train encoders and ELNet");
    train->add_option("--config", ta.config, "JSON config with 'model' and/or 'train' sections");
    train->add_option("--data", ta.data, "Dataset manifest")->required();
    train->add_option("--out", ta.out, "Output directory")->required();
    train->add_option("--modality", ta.modality, "audio|video|both");
    train->add_option("--epochs", ta.epochs);
    train->add_option("--batch-size", ta.batch_size);
    train->add_option("--max-steps", ta.max_steps, "Cap on optimizer steps");
    train->add_option("--window-stride", ta.window_stride);
    train->add_option("--checkpoint-every", ta.checkpoint_every);
    train->add_option("--lr", ta.lr);
    train->add_option("--weight-decay", ta.weight_decay);
    train->add_option("--seed", ta.seed, "Training seed (default: config, $FAD_SEED or 0)");
    train->add_option("--resume", ta.resume, "Checkpoint to resume from");

    GenerateArgs ga;
    auto* generate = app.add_subcommand("generate", "Stream clips through the model");
    generate->add_option("--checkpoint", ga.checkpoint)->required();
    generate->add_option("--input-manifest", ga.input, "Dataset manifest or stream sidecar")->required();
    generate->add_option("--steps", ga.steps, "Sampler steps S")->capture_default_str();
    generate->add_option("--out", ga.out, "Output directory")->required();
    generate->add_option("--split", ga.split, "Dataset split to generate")->capture_default_str();
    generate->add_option("--seed", ga.seed);

    EvalArgs ea;
    auto* evaluate = app.add_subcommand("eval", "Metrics and baselines");
    evaluate->add_option("--pred", ea.pred, "generated.json or a dataset manifest")->required();
    evaluate->add_option("--gt", ea.gt, "Ground-truth dataset manifest");
    evaluate->add_option("--train-data", ea.train_data, "Dataset whose train split feeds baselines");
    evaluate->add_option("--out", ea.out, "Output directory")->required();
    evaluate->add_option("--kmeans-k", ea.kmeans_k)->capture_default_str();
    evaluate->add_option("--max-lag", ea.max_lag)->capture_default_str();
    evaluate->add_option("--split", ea.split, "Split scored when --pred is a dataset")->capture_default_str();
    evaluate->add_option("--seed", ea.seed);

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "Latency and FLOPs per sampler step count");
    bench->add_option("--checkpoint", ba.checkpoint)->required();
    bench->add_option("--steps-list", ba.steps_list)->capture_default_str();
    bench->add_option("--repeats", ba.repeats)->capture_default_str();
    bench->add_option("--warmup", ba.warmup)->capture_default_str();
    bench->add_option("--data", ba.data, "Dataset for held-out L2/SI");
    bench->add_option("--out", ba.out, "CSV output path");
    bench->add_option("--seed", ba.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << one_line(e.what()) << '\n';
        return e.get_exit_code() ? e.get_exit_code() : 2;
    }

    try {
        if (*gen) return cmd_gen_data(gd);
        if (*train) return cmd_train(ta);
        if (*generate) return cmd_generate(ga);
        if (*evaluate) return cmd_eval(ea);
        if (*bench) return cmd_bench(ba);
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 1;
}
