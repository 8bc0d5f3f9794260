#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fad/evalkit.hpp"
#include "fad/pipeline.hpp"
#include "fad/synthdata.hpp"

namespace fad {

// Listener predictions for a set of corpus sequences, all covering the frame
// range [first_frame, first_frame + rows).
struct CorpusPrediction {
    std::vector<std::size_t> seqs;
    std::vector<nn::Tensor<float>> motion;
    std::size_t first_frame = 0;
};

// Sequence s draws sampler noise from streams starting at s << 16.
CorpusPrediction predict_corpus(const ListenerModel& model, const synth::Corpus& corpus,
                                const std::vector<std::size_t>& seqs, std::size_t steps,
                                std::uint64_t seed);

struct EvalOptions {
    std::size_t kmeans_k = 16;
    std::uint64_t seed = 0;
    std::size_t max_lag = 30;
    bool baselines = true;
    MelConfig mel;
};

// Scores `pred` (name "model") and, optionally, the five classical baselines
// on the same sequences and frame range. Baselines and k-means see only the
// `train` sequences.
std::vector<eval::MetricReport> evaluate_corpus(const synth::Corpus& corpus,
                                                const std::vector<std::size_t>& train,
                                                const CorpusPrediction& pred,
                                                const EvalOptions& opt);

// Rows [first, first + rows) of a [T, D] matrix.
nn::Tensor<float> slice_rows(const nn::Tensor<float>& m, std::size_t first, std::size_t rows);

} // namespace fad
