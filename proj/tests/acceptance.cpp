// Acceptance run: one PASS/FAIL line per criterion. The oracle criteria reuse
// the unit cases; learning, ablation and latency train and time real models.
//
//   fad_acceptance            all criteria
//   fad_acceptance 3 6        selected criteria

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "fad/experiment.hpp"
#include "fad/io.hpp"
#include "fad/training.hpp"
#include "helpers.hpp"

using namespace fad;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct CaseFilter {
    std::string suite;
    std::string cases;
};

// Runs unit cases through doctest; an empty selection counts as a failure.
// The doctest report is echoed only when something failed.
bool run_cases(const CaseFilter& f, std::string& detail) {
    std::ostringstream report;
    doctest::Context ctx;
    if (!f.suite.empty()) ctx.addFilter("test-suite", f.suite.c_str());
    if (!f.cases.empty()) ctx.addFilter("test-case", f.cases.c_str());
    ctx.setCout(&report);
    const int rc = ctx.run();
    const std::string text = report.str();
    const auto at = text.find("test cases:");
    const int n = at == std::string::npos ? 0 : std::atoi(text.c_str() + at + 11);
    const std::string what = f.suite + (f.cases.empty() ? "" : "/" + f.cases);
    if (rc != 0 || n == 0) std::fputs(text.c_str(), stdout);
    if (n == 0) {
        detail += (detail.empty() ? "" : ", ") + std::string("no cases matched ") + what;
        return false;
    }
    detail += (detail.empty() ? "" : ", ") + std::to_string(n) + " cases in " + what;
    return rc == 0;
}

Verdict unit_criterion(const std::vector<CaseFilter>& filters, double budget_s) {
    Verdict v{true, ""};
    const auto t0 = Clock::now();
    for (const auto& f : filters) v.pass = run_cases(f, v.detail) && v.pass;
    const double s = seconds_since(t0);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "; %.1f s (budget %.0f s)", s, budget_s);
    v.detail += buf;
    v.pass = v.pass && s < budget_s;
    return v;
}

// ---------------------------------------------------------------------------
// Shared corpus and training for the learning criteria.

struct Recipe {
    std::size_t steps;
    double lr = 3e-4;
    std::size_t batch = 32;
};

constexpr Recipe kLearning{1000};
constexpr Recipe kAblation{250};
constexpr double kBudgetS = 30.0 * 60.0;

const synth::Corpus& corpus() {
    static const synth::Corpus c = [] {
        synth::CorpusParams p;
        p.seed = 0;
        p.sequences = 100;
        p.dyad.T = 64;
        p.dyad.delay = 4;
        p.dyad.noise_sigma = 0.02;
        return synth::generate_corpus(p);
    }();
    return c;
}

std::vector<std::size_t> heldout() {
    const auto& c = corpus();
    std::vector<std::size_t> s = c.split.val;
    s.insert(s.end(), c.split.test.begin(), c.split.test.end());
    std::sort(s.begin(), s.end());
    return s;
}

struct Trained {
    std::unique_ptr<ListenerModel> model;
    double seconds = 0.0;
};

Trained train(Modality m, std::uint64_t seed, const Recipe& r) {
    ModelConfig mc;
    mc.modality = m;
    mc.init_seed = seed;
    TrainConfig tc;
    tc.seed = seed;
    tc.learning_rate = r.lr;
    tc.batch_size = r.batch;
    tc.max_steps = r.steps;
    Trained out;
    out.model = std::make_unique<ListenerModel>(mc);
    const auto t0 = Clock::now();
    const TrainingSet ts = make_training_set(corpus(), corpus().split.train, mc.clip_len, 1, mc.mel);
    Trainer tr(*out.model, tc, ts);
    tr.run();
    out.seconds = seconds_since(t0);
    return out;
}

std::map<std::string, double> heldout_l2(const ListenerModel& model, std::size_t steps,
                                         bool baselines) {
    EvalOptions opt;
    opt.baselines = baselines;
    opt.mel = model.config().mel;
    const auto pred = predict_corpus(model, corpus(), heldout(), steps, 7);
    std::map<std::string, double> out;
    for (const auto& r : evaluate_corpus(corpus(), corpus().split.train, pred, opt)) {
        out[r.name] = r.expression.l2;
    }
    return out;
}

Verdict learning() {
    const Trained t = train(Modality::both, 0, kLearning);
    const auto s1 = heldout_l2(*t.model, 1, true);
    const auto s10 = heldout_l2(*t.model, 10, false);
    const double l1 = s1.at("model"), l10 = s10.at("model");
    const double median = s1.at("median"), random = s1.at("random");
    Verdict v;
    v.pass = t.seconds <= kBudgetS && l1 <= 0.8 * median && l1 <= 0.85 * random && l1 <= 1.1 * l10;
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "train %.0f s; held-out expr L2 S=1 %.3f, S=10 %.3f (S1/S10 %.3f, need <= 1.10); "
                  "median %.3f (ratio %.3f, need <= 0.80); random %.3f (ratio %.3f, need <= 0.85); "
                  "nn_motion %.3f nn_audio %.3f mirror %.3f",
                  t.seconds, l1, l10, l1 / l10, median, l1 / median, random, l1 / random,
                  s1.at("nn_motion"), s1.at("nn_audio"), s1.at("mirror"));
    v.detail = buf;
    return v;
}

Verdict ablation() {
    std::map<Modality, double> mean;
    std::string per_seed;
    for (Modality m : {Modality::audio, Modality::video, Modality::both}) {
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            const Trained t = train(m, seed, kAblation);
            const double l2 = heldout_l2(*t.model, 1, false).at("model");
            mean[m] += l2 / 3.0;
            char buf[64];
            std::snprintf(buf, sizeof(buf), " %s/%llu=%.3f", to_string(m).c_str(),
                          static_cast<unsigned long long>(seed), l2);
            per_seed += buf;
        }
    }
    Verdict v;
    v.pass = mean[Modality::both] <= std::min(mean[Modality::audio], mean[Modality::video]);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "mean held-out expr L2 (S=1, %zu steps): both %.3f audio %.3f video %.3f;",
                  kAblation.steps, mean[Modality::both], mean[Modality::audio], mean[Modality::video]);
    v.detail = buf + per_seed;
    return v;
}

// ---------------------------------------------------------------------------

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Verdict efficiency() {
    const ModelConfig mc;
    const ListenerModel model(mc);
    synth::DyadParams p;
    p.seed = 5;
    p.T = 16;
    const auto d = synth::generate_dyad(p);
    const Clip clip = segment_clips(d.frames, d.audio, mc.clip_len).clips.at(0);
    MelSpectrogram mel(mc.mel);

    std::map<std::size_t, double> med;
    bool calls_ok = true;
    for (std::size_t S : {1u, 10u}) {
        std::vector<double> ms;
        for (std::size_t r = 0; r < 3 + 30; ++r) {
            ClipLatency t;
            infer_clip(model, clip, mel, S, 0, r, &t);
            calls_ok = calls_ok && t.denoiser_calls == S;
            if (r >= 3) ms.push_back(t.total_ms());
        }
        med[S] = median_of(ms);
    }
    bool linear = true;
    const FlopCount one = count_flops(mc.elnet, mc.visual, mc.mel, 1);
    for (std::size_t S = 1; S <= 10; ++S) {
        const FlopCount f = count_flops(mc.elnet, mc.visual, mc.mel, S);
        linear = linear && f.total() - one.total() == static_cast<double>(S - 1) * one.denoiser_pass;
    }
    Verdict v;
    v.pass = med[1] < 50.0 && med[1] < med[10] && linear && calls_ok;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "median latency S=1 %.2f ms (need < 50), S=10 %.2f ms, ratio S1/S10 %.3f; "
                  "denoiser pass %.3g FLOPs, linear in S: %s; calls == S: %s",
                  med[1], med[10], med[1] / med[10], one.denoiser_pass, linear ? "yes" : "no",
                  calls_ok ? "yes" : "no");
    v.detail = buf;
    return v;
}

// ---------------------------------------------------------------------------

Verdict determinism() {
    test::TempDir dir("acceptance");
    const synth::Corpus c = test::tiny_corpus(8, 32, 11);
    const ModelConfig mc = test::tiny_model(Modality::both, 3);
    TrainConfig tc;
    tc.max_steps = 4;
    tc.batch_size = 8;
    tc.seed = 9;
    const TrainingSet ts = make_training_set(c, c.split.train, mc.clip_len, 1, mc.mel);

    std::vector<std::string> ckpt, blobs;
    for (int run = 0; run < 2; ++run) {
        ListenerModel model(mc);
        Trainer tr(model, tc, ts);
        tr.run();
        const fs::path path = dir / ("run" + std::to_string(run) + ".bin");
        save_checkpoint(path, model, tc, tr.adam());
        ckpt.push_back(io::read_bytes(path));
        const auto& d = c.sequences[c.split.val.at(0)];
        const auto out = generate_stream(model, d.frames, d.audio, 1, 4);
        const fs::path blob = dir / ("gen" + std::to_string(run) + ".f32");
        io::write_f32(blob, out.motion.data());
        blobs.push_back(io::read_bytes(blob));
    }
    const bool same_ckpt = ckpt[0] == ckpt[1];
    const bool same_blob = blobs[0] == blobs[1];

    ListenerModel reloaded(read_checkpoint_config(dir / "run0.bin").model);
    AdamState<float> adam;
    load_checkpoint(dir / "run0.bin", reloaded, &adam);
    save_checkpoint(dir / "again.bin", reloaded, read_checkpoint_config(dir / "run0.bin").train, adam);
    const bool ckpt_rt = io::read_bytes(dir / "again.bin") == ckpt[0];

    const auto m1 = synth::write_dataset(c, dir / "d1");
    const auto m2 = synth::write_dataset(synth::read_dataset(m1), dir / "d2");
    bool data_rt = io::read_bytes(m1) == io::read_bytes(m2);
    for (const char* b : {"speaker_frames.f32", "speaker_audio.f32", "speaker_motion.f32",
                          "listener_motion.f32"}) {
        data_rt = data_rt && io::read_bytes(dir / "d1" / b) == io::read_bytes(dir / "d2" / b);
    }
    Verdict v;
    v.pass = same_ckpt && same_blob && ckpt_rt && data_rt;
    auto yn = [](bool b) { return b ? "yes" : "no"; };
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "identical checkpoints %s; identical generated blobs %s; checkpoint round trip %s; "
                  "dataset round trip %s",
                  yn(same_ckpt), yn(same_blob), yn(ckpt_rt), yn(data_rt));
    v.detail = buf;
    return v;
}

struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "numerics", [] { return unit_criterion({{"numerics", ""}}, 60.0); }},
        {2, "diffusion", [] { return unit_criterion({{"diffusion", ""}}, 60.0); }},
        {5, "metrics", [] {
             return unit_criterion({{"evalkit", "frechet*,shannon*,tlcc*"},
                                    {"synthdata", "listener lags the speaker*"}},
                                   120.0);
         }},
        {7, "determinism", determinism},
        {6, "efficiency", efficiency},
        {3, "learning", learning},
        {4, "ablation", ablation},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    std::map<int, std::pair<const char*, Verdict>> results;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        std::printf("  [criterion %d] %s\n", c.id, v.detail.c_str());
        std::fflush(stdout);
        results[c.id] = {c.name, v};
    }
    int failed = 0;
    for (const auto& [id, r] : results) {
        std::printf("%s criterion %d (%s): %s\n", r.second.pass ? "PASS" : "FAIL", id, r.first,
                    r.second.detail.c_str());
        failed += r.second.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
