#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fad/tensor.hpp"

namespace fad::eval {

// Mean over frames of the per-frame Euclidean distance. [T, D] inputs.
double l2_metric(const nn::Tensor<double>& pred, const nn::Tensor<double>& gt);

// Frechet distance between Gaussian fits of [N, D] and [M, D] sample sets.
// Covariances get +1e-6 I; the square-root trace goes through
// sqrt(Sa) Sb sqrt(Sa) with negative eigenvalues clipped to 0.
double frechet_distance(const nn::Tensor<double>& a, const nn::Tensor<double>& b);

struct KMeansModel {
    std::size_t k = 0;
    nn::Tensor<double> centroids; // [k, D]
    std::uint64_t seed = 0;
    std::size_t max_iters = 200;
    std::string view;
    std::size_t iterations = 0;
    std::vector<double> sse_history; // within-cluster SSE after each assignment

    std::size_t dim() const { return centroids.dim(1); }
    // Nearest centroid; ties go to the lowest index.
    std::size_t assign(const double* row) const;
};

KMeansModel kmeans_fit(const nn::Tensor<double>& data, std::size_t k, std::uint64_t seed,
                       std::size_t max_iters = 200);

// Entropy (nats) of the cluster-assignment histogram of the rows of `preds`.
double shannon_index(const nn::Tensor<double>& preds, const KMeansModel& model);

// Per-frame L2 norm of mean-centred coefficients.
std::vector<double> norm_trace(const nn::Tensor<double>& m);

struct TlccResult {
    double peak_corr = 0.0;
    int peak_lag = 0;
    double corr_at_zero = 0.0;
    std::vector<double> curve; // lags -max_lag..max_lag
};

// Pearson correlation of listener[t] with speaker[t - lag] for every lag in
// [-max_lag, max_lag] on the norm traces; ties resolve to the smallest |lag|.
TlccResult tlcc(const nn::Tensor<double>& listener, const nn::Tensor<double>& speaker,
                std::size_t max_lag);
// Same on precomputed 1-D traces.
TlccResult tlcc_traces(const std::vector<double>& listener, const std::vector<double>& speaker,
                       std::size_t max_lag);

// Largest max_lag honouring T > 2 max_lag.
std::size_t clamp_max_lag(std::size_t T, std::size_t max_lag);

enum class Baseline { nn_motion, nn_audio, random, mirror, median };

Baseline parse_baseline(const std::string& s);
std::string to_string(Baseline b);
const std::vector<Baseline>& all_baselines();

// Training-set material the classical baselines search over.
struct BaselineCorpus {
    std::vector<nn::Tensor<float>> speaker_motion;  // [T, 56]
    std::vector<nn::Tensor<float>> audio_features;  // [T, n_mels]
    std::vector<nn::Tensor<float>> listener_motion; // [T, 56]
};

struct BaselineQuery {
    const nn::Tensor<float>* speaker_motion = nullptr;
    const nn::Tensor<float>* audio_features = nullptr;
    std::size_t T = 0;
    std::uint64_t seed = 0;
};

nn::Tensor<float> run_baseline(Baseline kind, const BaselineCorpus& corpus,
                               const BaselineQuery& query);

struct ViewReport {
    double l2 = 0.0;
    double fd = 0.0;
    double si = 0.0;
    double tlcc_peak_corr = 0.0;
    double tlcc_peak_lag = 0.0;
    double tlcc_corr_at_zero = 0.0;
};

struct MetricReport {
    std::string name;
    ViewReport expression;
    ViewReport rotation;
};

// Scores predicted listener sequences against ground truth. All inputs are
// per-sequence [T', 56] over the same frame range; `speaker` supplies the
// TLCC partner. TLCC entries are averaged over sequences with a non-constant
// trace (NaN when none is).
struct EvalInputs {
    std::vector<nn::Tensor<float>> pred;
    std::vector<nn::Tensor<float>> gt;
    std::vector<nn::Tensor<float>> speaker;
};

struct KMeansPair {
    KMeansModel expression;
    KMeansModel rotation;
};

KMeansPair fit_view_clusters(const std::vector<nn::Tensor<float>>& listener_train,
                             std::size_t k, std::uint64_t seed);

MetricReport evaluate(const std::string& name, const EvalInputs& in, const KMeansPair& km,
                      std::size_t max_lag = 30);

std::string reports_csv(const std::vector<MetricReport>& reports);
std::string reports_json(const std::vector<MetricReport>& reports);

} // namespace fad::eval
