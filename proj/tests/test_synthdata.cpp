#include <doctest.h>

#include <Eigen/Dense>
#include <fstream>
#include <set>

#include "fad/evalkit.hpp"
#include "fad/io.hpp"
#include "fad/synthdata.hpp"
#include "helpers.hpp"

using namespace fad;
namespace fs = std::filesystem;

namespace {

synth::DyadParams small_params(std::uint64_t seed) {
    synth::DyadParams p;
    p.seed = seed;
    p.T = 48;
    p.image_size = 24;
    return p;
}

void check_same(const synth::Dyad& a, const synth::Dyad& b) {
    CHECK(a.frames == b.frames);
    CHECK(a.audio == b.audio);
    CHECK(a.speaker_motion == b.speaker_motion);
    CHECK(a.listener_motion == b.listener_motion);
}

} // namespace

TEST_SUITE("synthdata") {

TEST_CASE("generation is deterministic and seed dependent") {
    auto a = synth::generate_dyad(small_params(3));
    auto b = synth::generate_dyad(small_params(3));
    check_same(a, b);
    CHECK(a.latent == b.latent);
    auto c = synth::generate_dyad(small_params(4));
    CHECK_FALSE(a.listener_motion == c.listener_motion);

    CHECK(a.frames.shape() == nn::Shape{48, 1, 24, 24});
    CHECK(a.speaker_motion.shape() == nn::Shape{48, 56});
    CHECK(a.latent.shape() == nn::Shape{52, 8});
    for (float v : a.frames.storage()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("noiseless listener is the coupling applied to the delayed latent") {
    auto p = small_params(8);
    p.noise_sigma = 0.0;
    p.coupling = synth::make_coupling(11, p.latent_dim);
    auto d = synth::generate_dyad(p);
    for (std::size_t t = 0; t < p.T; ++t) {
        for (std::size_t r = 0; r < 56; ++r) {
            double l = 0.0;
            for (std::size_t j = 0; j < p.latent_dim; ++j) l += p.coupling.listener(r, j) * d.latent(t, j);
            CHECK(d.listener_motion(t, r) == static_cast<float>(l));
        }
    }
}

TEST_CASE("listener lags the speaker by the configured delay") {
    auto p = small_params(21);
    p.T = 512;
    p.delay = 4;
    auto d = synth::generate_dyad(p);
    auto r = eval::tlcc(d.listener_motion.cast<double>(), d.speaker_motion.cast<double>(), 30);
    CHECK(r.peak_lag >= 3);
    CHECK(r.peak_lag <= 5);
}

TEST_CASE("delayed latent explains the listener linearly") {
    for (double sigma : {0.02, 0.05}) {
        auto p = small_params(30);
        p.T = 400;
        p.noise_sigma = sigma;
        auto d = synth::generate_dyad(p);
        Eigen::MatrixXd X(p.T, p.latent_dim + 1), Y(p.T, 56);
        for (std::size_t t = 0; t < p.T; ++t) {
            for (std::size_t j = 0; j < p.latent_dim; ++j) X(t, j) = d.latent(t, j);
            X(t, p.latent_dim) = 1.0;
            for (std::size_t r = 0; r < 56; ++r) Y(t, r) = d.listener_motion(t, r);
        }
        Eigen::MatrixXd B = X.colPivHouseholderQr().solve(Y);
        const double ss_res = (Y - X * B).squaredNorm();
        const double ss_tot = (Y.rowwise() - Y.colwise().mean()).squaredNorm();
        CHECK(1.0 - ss_res / ss_tot > 0.9);
    }
}

TEST_CASE("invalid parameters are rejected") {
    auto p = small_params(1);
    p.T = 4;
    p.delay = 4;
    CHECK_THROWS(synth::generate_dyad(p));
    p = small_params(1);
    p.delay = 0;
    CHECK_THROWS(synth::generate_dyad(p));
    p = small_params(1);
    p.smoothing = 1.0;
    CHECK_THROWS(synth::generate_dyad(p));
}

TEST_CASE("split is disjoint, complete and seed stable") {
    auto s = synth::make_split(100, 9);
    CHECK(s.train.size() == 70);
    CHECK(s.val.size() == 20);
    CHECK(s.test.size() == 10);
    std::set<std::size_t> all;
    for (const auto* v : {&s.train, &s.val, &s.test}) all.insert(v->begin(), v->end());
    CHECK(all.size() == 100);
    CHECK(*all.rbegin() == 99);
    auto again = synth::make_split(100, 9);
    CHECK(again.train == s.train);
    CHECK(again.test == s.test);
    CHECK_FALSE(synth::make_split(100, 10).train == s.train);
}

TEST_CASE("dataset round trip is exact") {
    test::TempDir dir("synth_rt");
    auto c = test::tiny_corpus(6, 20, 3);
    auto manifest = synth::write_dataset(c, dir.path(), true);
    auto r = synth::read_dataset(manifest);
    REQUIRE(r.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) check_same(c.sequences[i], r.sequences[i]);
    CHECK(r.seeds == c.seeds);
    CHECK(r.split.train == c.split.train);
    CHECK(r.split.val == c.split.val);
    CHECK(r.split.test == c.split.test);
    CHECK(r.T == c.T);
    CHECK(r.delay == c.delay);
    CHECK(fs::exists(dir / "audio/seq_0000.wav"));

    test::TempDir dir2("synth_rt2");
    auto m2 = synth::write_dataset(r, dir2.path());
    for (const char* blob : {"speaker_frames.f32", "speaker_audio.f32", "speaker_motion.f32", "listener_motion.f32"}) {
        CHECK(io::read_bytes(dir / blob) == io::read_bytes(dir2 / blob));
    }
    CHECK(io::read_bytes(manifest) == io::read_bytes(m2));
}

TEST_CASE("corrupt datasets are rejected") {
    test::TempDir dir("synth_bad");
    auto c = test::tiny_corpus(3, 20, 4);
    auto manifest = synth::write_dataset(c, dir.path());
    const std::string text = io::read_bytes(manifest);

    auto blob = io::read_bytes(dir / "speaker_motion.f32");
    io::write_bytes(dir / "speaker_motion.f32", blob.substr(0, blob.size() - 4));
    CHECK_THROWS_WITH(synth::read_dataset(manifest), doctest::Contains("speaker_motion"));
    io::write_bytes(dir / "speaker_motion.f32", blob);
    CHECK_NOTHROW(synth::read_dataset(manifest));

    fs::remove(dir / "listener_motion.f32");
    CHECK_THROWS_WITH(synth::read_dataset(manifest), doctest::Contains("listener_motion"));

    std::string v2 = text;
    v2.replace(v2.find("\"version\": 1"), 12, "\"version\": 2");
    io::write_bytes(manifest, v2);
    CHECK_THROWS_WITH(synth::read_dataset(manifest), doctest::Contains("version"));
}

TEST_CASE("full-size listener blob has the declared byte length") {
    test::TempDir dir("synth_full");
    synth::CorpusParams p;
    p.sequences = 100;
    p.dyad.T = 64;
    p.dyad.image_size = 8;
    auto manifest = synth::write_dataset(synth::generate_corpus(p), dir.path());
    CHECK(fs::file_size(dir / "listener_motion.f32") == 100u * 64u * 56u * 4u);
    auto j = nlohmann::json::parse(io::read_bytes(manifest));
    CHECK(j["sequences"] == 100);
    CHECK(j["frames"] == 64);
    CHECK(j["delay"] == 4);
}

}
