#include "fad/experiment.hpp"

namespace fad {

nn::Tensor<float> slice_rows(const nn::Tensor<float>& m, std::size_t first, std::size_t rows) {
    require(m.rank() == 2 && first + rows <= m.dim(0), "slice_rows: range out of bounds");
    const std::size_t d = m.dim(1);
    std::vector<float> out(m.ptr() + first * d, m.ptr() + (first + rows) * d);
    return nn::Tensor<float>({rows, d}, std::move(out));
}

CorpusPrediction predict_corpus(const ListenerModel& model, const synth::Corpus& corpus,
                                const std::vector<std::size_t>& seqs, std::size_t steps,
                                std::uint64_t seed) {
    require(!seqs.empty(), "predict: no sequences selected");
    CorpusPrediction p;
    p.seqs = seqs;
    for (std::size_t s : seqs) {
        require(s < corpus.size(), "predict: sequence index out of range");
        const auto& d = corpus.sequences[s];
        StreamOutput out = generate_stream(model, d.frames, d.audio, steps, seed,
                                           static_cast<std::uint64_t>(s) << 16);
        p.first_frame = out.first_frame;
        p.motion.push_back(std::move(out.motion));
    }
    return p;
}

std::vector<eval::MetricReport> evaluate_corpus(const synth::Corpus& corpus,
                                                const std::vector<std::size_t>& train,
                                                const CorpusPrediction& pred,
                                                const EvalOptions& opt) {
    require(!train.empty(), "evaluate: empty training split");
    require(pred.seqs.size() == pred.motion.size() && !pred.seqs.empty(),
            "evaluate: prediction set is empty or inconsistent");
    const std::size_t first = pred.first_frame;
    const std::size_t rows = pred.motion.front().dim(0);

    eval::BaselineCorpus bc;
    MelSpectrogram mel(opt.mel);
    std::vector<nn::Tensor<float>> listener_train;
    for (std::size_t s : train) {
        const auto& d = corpus.sequences.at(s);
        bc.speaker_motion.push_back(d.speaker_motion);
        bc.listener_motion.push_back(d.listener_motion);
        if (opt.baselines) bc.audio_features.push_back(mel.compute(d.audio, corpus.T));
    }
    const eval::KMeansPair km = eval::fit_view_clusters(bc.listener_motion, opt.kmeans_k, opt.seed);

    eval::EvalInputs base;
    for (std::size_t i = 0; i < pred.seqs.size(); ++i) {
        const auto& d = corpus.sequences.at(pred.seqs[i]);
        require(pred.motion[i].dim(0) == rows, "evaluate: ragged predictions");
        base.gt.push_back(slice_rows(d.listener_motion, first, rows));
        base.speaker.push_back(slice_rows(d.speaker_motion, first, rows));
    }

    std::vector<eval::MetricReport> reports;
    eval::EvalInputs in = base;
    in.pred = pred.motion;
    reports.push_back(eval::evaluate("model", in, km, opt.max_lag));
    if (!opt.baselines) return reports;

    for (eval::Baseline b : eval::all_baselines()) {
        eval::EvalInputs bi = base;
        for (std::size_t i = 0; i < pred.seqs.size(); ++i) {
            const auto& d = corpus.sequences.at(pred.seqs[i]);
            const nn::Tensor<float> audio = b == eval::Baseline::nn_audio
                                                ? mel.compute(d.audio, corpus.T)
                                                : nn::Tensor<float>();
            eval::BaselineQuery q;
            q.speaker_motion = &d.speaker_motion;
            q.audio_features = b == eval::Baseline::nn_audio ? &audio : nullptr;
            q.T = corpus.T;
            q.seed = opt.seed ^ (static_cast<std::uint64_t>(pred.seqs[i]) << 20);
            bi.pred.push_back(slice_rows(eval::run_baseline(b, bc, q), first, rows));
        }
        reports.push_back(eval::evaluate(eval::to_string(b), bi, km, opt.max_lag));
    }
    return reports;
}

} // namespace fad
