#include "fad/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "fad/diffusion.hpp"
#include "fad/motion.hpp"

namespace fad::eval {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

void require_matrix(const nn::Tensor<double>& m, const char* what) {
    require(m.rank() == 2, std::string(what) + ": expected a [T, D] matrix");
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
as_eigen(const nn::Tensor<double>& m) {
    return {m.ptr(), static_cast<Eigen::Index>(m.dim(0)), static_cast<Eigen::Index>(m.dim(1))};
}

void gaussian_fit(const nn::Tensor<double>& x, Vec& mu, Mat& cov) {
    const auto X = as_eigen(x);
    mu = X.colwise().mean().transpose();
    const Mat centered = X.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(x.dim(0) - 1);
    cov += 1e-6 * Mat::Identity(cov.rows(), cov.cols());
}

Mat symmetric_sqrt(const Mat& a) {
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    require(es.info() == Eigen::Success, "frechet: eigendecomposition failed");
    const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

nn::Tensor<double> to_double(const nn::Tensor<float>& t) { return t.cast<double>(); }

nn::Tensor<double> stack_rows(const std::vector<nn::Tensor<double>>& parts) {
    require(!parts.empty(), "no rows to stack");
    const std::size_t d = parts.front().dim(1);
    std::vector<double> all;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(1) == d, "inconsistent widths");
        all.insert(all.end(), p.storage().begin(), p.storage().end());
    }
    const std::size_t rows = all.size() / d;
    return nn::Tensor<double>({rows, d}, std::move(all));
}

} // namespace

double l2_metric(const nn::Tensor<double>& pred, const nn::Tensor<double>& gt) {
    require_matrix(pred, "l2");
    require(pred.shape() == gt.shape(), "l2: shape mismatch " + nn::shape_str(pred.shape()) +
                                            " vs " + nn::shape_str(gt.shape()));
    const std::size_t T = pred.dim(0), D = pred.dim(1);
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        acc += std::sqrt(sq_dist(pred.ptr() + t * D, gt.ptr() + t * D, D));
    }
    return acc / static_cast<double>(T);
}

double frechet_distance(const nn::Tensor<double>& a, const nn::Tensor<double>& b) {
    require_matrix(a, "frechet");
    require_matrix(b, "frechet");
    require(a.dim(1) == b.dim(1), "frechet: dimension mismatch");
    require(a.dim(0) >= 2 && b.dim(0) >= 2, "frechet: degenerate input (need >= 2 samples)");
    Vec mu_a, mu_b;
    Mat cov_a, cov_b;
    gaussian_fit(a, mu_a, cov_a);
    gaussian_fit(b, mu_b, cov_b);
    const Mat root_a = symmetric_sqrt(cov_a);
    const Mat inner = root_a * cov_b * root_a;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (inner + inner.transpose()),
                                          Eigen::EigenvaluesOnly);
    require(es.info() == Eigen::Success, "frechet: eigendecomposition failed");
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double fd = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    return std::max(fd, 0.0);
}

std::size_t KMeansModel::assign(const double* row) const {
    const std::size_t d = dim();
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
        const double dist = sq_dist(row, centroids.ptr() + c * d, d);
        if (dist < best_d) {
            best_d = dist;
            best = c;
        }
    }
    return best;
}

KMeansModel kmeans_fit(const nn::Tensor<double>& data, std::size_t k, std::uint64_t seed,
                       std::size_t max_iters) {
    require_matrix(data, "kmeans");
    const std::size_t n = data.dim(0), d = data.dim(1);
    require(k >= 1, "kmeans: k must be positive");
    require(n >= k, "kmeans: N=" + std::to_string(n) + " < k=" + std::to_string(k));
    KMeansModel m;
    m.k = k;
    m.seed = seed;
    m.max_iters = max_iters;
    m.centroids = nn::Tensor<double>({k, d});

    std::mt19937_64 rng = stream_rng(seed, 0xC1u);
    auto set_centroid = [&](std::size_t c, std::size_t row) {
        std::copy_n(data.ptr() + row * d, d, m.centroids.ptr() + c * d);
    };
    set_centroid(0, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i],
                                  sq_dist(data.ptr() + i * d, m.centroids.ptr() + (c - 1) * d, d));
            total += nearest[i];
        }
        std::size_t pick;
        if (total > 0.0) {
            pick = std::discrete_distribution<std::size_t>(nearest.begin(), nearest.end())(rng);
        } else {
            pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        }
        set_centroid(c, pick);
    }

    std::vector<std::size_t> labels(n, k);
    std::vector<double> sums(k * d);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < max_iters; ++it) {
        bool changed = false;
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = m.assign(data.ptr() + i * d);
            sse += sq_dist(data.ptr() + i * d, m.centroids.ptr() + c * d, d);
            if (c != labels[i]) {
                labels[i] = c;
                changed = true;
            }
        }
        m.sse_history.push_back(sse);
        m.iterations = it + 1;
        if (!changed) break;
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[labels[i]];
            for (std::size_t j = 0; j < d; ++j) sums[labels[i] * d + j] += data(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue; // empty cluster keeps its centroid
            for (std::size_t j = 0; j < d; ++j) {
                m.centroids(c, j) = sums[c * d + j] / static_cast<double>(counts[c]);
            }
        }
    }
    return m;
}

double shannon_index(const nn::Tensor<double>& preds, const KMeansModel& model) {
    require_matrix(preds, "shannon_index");
    require(preds.dim(1) == model.dim(), "shannon_index: dimension mismatch (" +
                                             std::to_string(preds.dim(1)) + " vs " +
                                             std::to_string(model.dim()) + ")");
    std::vector<std::size_t> hist(model.k, 0);
    for (std::size_t t = 0; t < preds.dim(0); ++t) ++hist[model.assign(preds.ptr() + t * preds.dim(1))];
    const double n = static_cast<double>(preds.dim(0));
    double h = 0.0;
    for (std::size_t c : hist) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

std::vector<double> norm_trace(const nn::Tensor<double>& m) {
    require_matrix(m, "norm_trace");
    const std::size_t T = m.dim(0), D = m.dim(1);
    std::vector<double> mean(D, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < D; ++j) mean[j] += m(t, j);
    }
    for (double& v : mean) v /= static_cast<double>(T);
    std::vector<double> out(T);
    for (std::size_t t = 0; t < T; ++t) out[t] = std::sqrt(sq_dist(m.ptr() + t * D, mean.data(), D));
    return out;
}

std::size_t clamp_max_lag(std::size_t T, std::size_t max_lag) {
    return T == 0 ? 0 : std::min(max_lag, (T - 1) / 2);
}

namespace {

bool constant(const std::vector<double>& x) {
    return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

double pearson(const double* a, const double* b, std::size_t n) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

} // namespace

TlccResult tlcc_traces(const std::vector<double>& listener, const std::vector<double>& speaker,
                       std::size_t max_lag) {
    require(listener.size() == speaker.size(), "tlcc: length mismatch");
    const std::size_t T = listener.size();
    require(T > 2 * max_lag, "tlcc: T=" + std::to_string(T) + " must exceed 2*max_lag=" +
                                 std::to_string(2 * max_lag));
    require(!constant(listener) && !constant(speaker), "degenerate signal");
    const int L = static_cast<int>(max_lag);
    TlccResult r;
    r.curve.assign(2 * max_lag + 1, 0.0);
    for (int lag = -L; lag <= L; ++lag) {
        const std::size_t a = static_cast<std::size_t>(std::abs(lag));
        const std::size_t n = T - a;
        // listener[t] against speaker[t - lag]
        const double c = lag >= 0 ? pearson(listener.data() + a, speaker.data(), n)
                                  : pearson(listener.data(), speaker.data() + a, n);
        r.curve[static_cast<std::size_t>(lag + L)] = c;
    }
    r.corr_at_zero = r.curve[max_lag];
    r.peak_corr = -std::numeric_limits<double>::infinity();
    for (int a = 0; a <= L; ++a) {
        for (int lag : {a, -a}) {
            const double c = r.curve[static_cast<std::size_t>(lag + L)];
            if (std::isfinite(c) && c > r.peak_corr) {
                r.peak_corr = c;
                r.peak_lag = lag;
            }
            if (a == 0) break;
        }
    }
    require(std::isfinite(r.peak_corr), "degenerate signal");
    return r;
}

TlccResult tlcc(const nn::Tensor<double>& listener, const nn::Tensor<double>& speaker,
                std::size_t max_lag) {
    require(listener.shape() == speaker.shape(), "tlcc: shape mismatch");
    return tlcc_traces(norm_trace(listener), norm_trace(speaker), max_lag);
}

Baseline parse_baseline(const std::string& s) {
    for (Baseline b : all_baselines()) {
        if (to_string(b) == s) return b;
    }
    throw Error("unknown baseline '" + s + "'");
}

std::string to_string(Baseline b) {
    switch (b) {
    case Baseline::nn_motion: return "nn_motion";
    case Baseline::nn_audio: return "nn_audio";
    case Baseline::random: return "random";
    case Baseline::mirror: return "mirror";
    case Baseline::median: return "median";
    }
    return "?";
}

const std::vector<Baseline>& all_baselines() {
    static const std::vector<Baseline> all{Baseline::nn_motion, Baseline::nn_audio,
                                           Baseline::random, Baseline::mirror, Baseline::median};
    return all;
}

namespace {

std::size_t nearest_sequence(const std::vector<nn::Tensor<float>>& keys,
                             const nn::Tensor<float>& query) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < keys.size(); ++i) {
        require(keys[i].shape() == query.shape(),
                "nearest neighbour: query shape " + nn::shape_str(query.shape()) +
                    " differs from corpus shape " + nn::shape_str(keys[i].shape()));
        double d = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) {
            const double t = static_cast<double>(keys[i][j]) - static_cast<double>(query[j]);
            d += t * t;
        }
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

} // namespace

nn::Tensor<float> run_baseline(Baseline kind, const BaselineCorpus& corpus,
                               const BaselineQuery& query) {
    require(!corpus.listener_motion.empty(), "baseline: empty training corpus");
    switch (kind) {
    case Baseline::nn_motion:
        require(query.speaker_motion != nullptr, "baseline nn_motion: query lacks speaker motion");
        return corpus.listener_motion[nearest_sequence(corpus.speaker_motion, *query.speaker_motion)];
    case Baseline::nn_audio:
        require(query.audio_features != nullptr, "baseline nn_audio: query lacks audio features");
        return corpus.listener_motion[nearest_sequence(corpus.audio_features, *query.audio_features)];
    case Baseline::random: {
        std::mt19937_64 rng = stream_rng(query.seed, 0xBA5Eu);
        std::uniform_int_distribution<std::size_t> pick(0, corpus.listener_motion.size() - 1);
        return corpus.listener_motion[pick(rng)];
    }
    case Baseline::mirror:
        require(query.speaker_motion != nullptr, "baseline mirror: query lacks speaker motion");
        return *query.speaker_motion;
    case Baseline::median: {
        require(query.T >= 1, "baseline median: query length must be positive");
        const std::size_t D = corpus.listener_motion.front().dim(1);
        std::vector<float> med(D);
        std::vector<float> col;
        for (std::size_t j = 0; j < D; ++j) {
            col.clear();
            for (const auto& m : corpus.listener_motion) {
                for (std::size_t t = 0; t < m.dim(0); ++t) col.push_back(m(t, j));
            }
            std::sort(col.begin(), col.end());
            const std::size_t n = col.size();
            med[j] = n % 2 ? col[n / 2] : 0.5f * (col[n / 2 - 1] + col[n / 2]);
        }
        nn::Tensor<float> out({query.T, D});
        for (std::size_t t = 0; t < query.T; ++t) std::copy(med.begin(), med.end(), out.ptr() + t * D);
        return out;
    }
    }
    throw Error("baseline: unknown kind");
}

KMeansPair fit_view_clusters(const std::vector<nn::Tensor<float>>& listener_train,
                             std::size_t k, std::uint64_t seed) {
    std::vector<nn::Tensor<double>> ex, rot;
    for (const auto& m : listener_train) {
        const nn::Tensor<double> d = to_double(m);
        ex.push_back(expression_view(d));
        rot.push_back(rotation_view(d));
    }
    KMeansPair p{kmeans_fit(stack_rows(ex), k, seed), kmeans_fit(stack_rows(rot), k, seed)};
    p.expression.view = "expression";
    p.rotation.view = "rotation";
    return p;
}

namespace {

ViewReport evaluate_view(const std::vector<nn::Tensor<double>>& pred,
                         const std::vector<nn::Tensor<double>>& gt,
                         const std::vector<nn::Tensor<double>>& speaker, const KMeansModel& km,
                         std::size_t max_lag) {
    ViewReport r;
    for (std::size_t i = 0; i < pred.size(); ++i) r.l2 += l2_metric(pred[i], gt[i]);
    r.l2 /= static_cast<double>(pred.size());
    const nn::Tensor<double> all_pred = stack_rows(pred);
    r.fd = frechet_distance(all_pred, stack_rows(gt));
    r.si = shannon_index(all_pred, km);
    double corr = 0.0, lag = 0.0, zero = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const std::vector<double> a = norm_trace(pred[i]);
        if (constant(a)) continue;
        const TlccResult t =
            tlcc_traces(a, norm_trace(speaker[i]), clamp_max_lag(a.size(), max_lag));
        corr += t.peak_corr;
        lag += t.peak_lag;
        zero += t.corr_at_zero;
        ++used;
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double u = static_cast<double>(used);
    r.tlcc_peak_corr = used ? corr / u : nan;
    r.tlcc_peak_lag = used ? lag / u : nan;
    r.tlcc_corr_at_zero = used ? zero / u : nan;
    return r;
}

} // namespace

MetricReport evaluate(const std::string& name, const EvalInputs& in, const KMeansPair& km,
                      std::size_t max_lag) {
    require(!in.pred.empty(), "evaluate: no sequences");
    require(in.pred.size() == in.gt.size() && in.pred.size() == in.speaker.size(),
            "evaluate: pred/gt/speaker counts differ");
    std::vector<nn::Tensor<double>> pe, ge, se, pr, gr, sr;
    for (std::size_t i = 0; i < in.pred.size(); ++i) {
        require(in.pred[i].shape() == in.gt[i].shape() && in.gt[i].shape() == in.speaker[i].shape(),
                "evaluate: sequence " + std::to_string(i) + " shape mismatch");
        const auto p = to_double(in.pred[i]), g = to_double(in.gt[i]), s = to_double(in.speaker[i]);
        pe.push_back(expression_view(p));
        ge.push_back(expression_view(g));
        se.push_back(expression_view(s));
        pr.push_back(rotation_view(p));
        gr.push_back(rotation_view(g));
        sr.push_back(rotation_view(s));
    }
    MetricReport r;
    r.name = name;
    r.expression = evaluate_view(pe, ge, se, km.expression, max_lag);
    r.rotation = evaluate_view(pr, gr, sr, km.rotation, max_lag);
    return r;
}

namespace {

nlohmann::json view_json(const ViewReport& v) {
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); };
    return {{"L2", num(v.l2)},
            {"FD", num(v.fd)},
            {"SI", num(v.si)},
            {"TLCC", num(v.tlcc_peak_corr)},
            {"TLCC_lag", num(v.tlcc_peak_lag)},
            {"TLCC_lag0", num(v.tlcc_corr_at_zero)}};
}

} // namespace

std::string reports_csv(const std::vector<MetricReport>& reports) {
    std::ostringstream os;
    os.precision(10);
    os << "method,view,L2,FD,SI,TLCC,TLCC_lag,TLCC_lag0\n";
    for (const auto& r : reports) {
        for (const auto* v : {&r.expression, &r.rotation}) {
            os << r.name << ',' << (v == &r.expression ? "expression" : "rotation") << ','
               << v->l2 << ',' << v->fd << ',' << v->si << ',' << v->tlcc_peak_corr << ','
               << v->tlcc_peak_lag << ',' << v->tlcc_corr_at_zero << '\n';
        }
    }
    return os.str();
}

std::string reports_json(const std::vector<MetricReport>& reports) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) {
        j.push_back({{"method", r.name},
                     {"expression", view_json(r.expression)},
                     {"rotation", view_json(r.rotation)}});
    }
    return j.dump(2) + "\n";
}

} // namespace fad::eval
