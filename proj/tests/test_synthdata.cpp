#include <cmath>
#include <set>

#include "doctest.h"
#include "mgh/synthdata.hpp"
#include "support.hpp"

using namespace mgh;
using testutil::TempDir;

namespace {

GenConfig quiet_config()
{
    GenConfig cfg;
    cfg.noise = 0.0;
    cfg.occlusion_prob = 0.0;
    cfg.max_shift = 0;
    cfg.seed = 5;
    return cfg;
}

} // namespace

TEST_CASE("default corpus layout and manifest consistency")
{
    TempDir dir("synth");
    GenConfig cfg;
    cfg.seed = 3;
    const CorpusManifest m = generate_corpus(cfg, dir.path());
    REQUIRE(m.tracklets.size() == 80);
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir.path()))
        if (entry.path().extension() == ".mghf") ++files;
    CHECK(files == 80);

    const Corpus corpus = load_corpus(dir.path());
    CHECK(corpus.manifest.tracklets.size() == 80);
    std::set<std::uint32_t> query_ids, gallery_ids, train_ids;
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
        const TrackletRecord& r = corpus.manifest.tracklets[i];
        CHECK(corpus.sequences[i].length() == cfg.frames);
        CHECK(corpus.sequences[i].camera_id == r.camera);
        CHECK(r.corruptions.size() == cfg.frames);
        for (const FrameCorruption& c : r.corruptions) CHECK(std::abs(c.shift) <= 2);
        (r.split == Split::Train ? train_ids : r.split == Split::Query ? query_ids : gallery_ids).insert(r.identity);
    }
    CHECK(train_ids.size() == 10);
    CHECK(query_ids == gallery_ids);
    for (std::uint32_t t : train_ids) CHECK(query_ids.count(t) == 0);

    // Every query identity has a gallery tracklet under another camera.
    for (std::size_t q : corpus.indices(Split::Query)) {
        const auto& qr = corpus.manifest.tracklets[q];
        bool cross = false;
        for (std::size_t g : corpus.indices(Split::Gallery)) {
            const auto& gr = corpus.manifest.tracklets[g];
            cross = cross || (gr.identity == qr.identity && gr.camera != qr.camera);
        }
        CHECK(cross);
    }

    const CorpusManifest again = CorpusManifest::from_json(m.to_json());
    CHECK(again.to_json() == m.to_json());
}

TEST_CASE("same seed gives a bitwise identical corpus")
{
    TempDir a("synth_a"), b("synth_b");
    GenConfig cfg;
    cfg.identities = 6;
    cfg.seed = 77;
    generate_corpus(cfg, a.path());
    generate_corpus(cfg, b.path());
    for (const auto& entry : std::filesystem::directory_iterator(a.path())) {
        const auto name = entry.path().filename().string();
        CHECK(testutil::read_bytes(a / name) == testutil::read_bytes(b / name));
    }
}

TEST_CASE("without noise or corruption, tracklets of one identity and camera are identical")
{
    TempDir dir("synth_quiet");
    GenConfig cfg = quiet_config();
    cfg.tracklets_per_identity = 6;
    generate_corpus(cfg, dir.path());
    const Corpus corpus = load_corpus(dir.path());
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i)
        for (std::size_t j = i + 1; j < corpus.sequences.size(); ++j) {
            const auto &ri = corpus.manifest.tracklets[i], &rj = corpus.manifest.tracklets[j];
            if (ri.identity == rj.identity && ri.camera == rj.camera) CHECK(corpus.sequences[i].frames == corpus.sequences[j].frames);
        }
}

TEST_CASE("noise-free global features are separable by nearest centroid")
{
    TempDir dir("synth_centroid");
    GenConfig cfg = quiet_config();
    cfg.view_strength = 0.0; // a nuisance term, like noise
    generate_corpus(cfg, dir.path());
    const Corpus corpus = load_corpus(dir.path());
    std::map<std::uint32_t, std::vector<double>> centroid;
    std::map<std::uint32_t, int> count;
    std::vector<std::vector<double>> globals;
    for (const auto& seq : corpus.sequences) {
        const Array g = horizontal_partition(seq.frames[0], 1);
        globals.emplace_back(g.storage());
    }
    for (std::size_t i = 0; i < globals.size(); ++i) {
        auto& c = centroid[corpus.manifest.tracklets[i].identity];
        c.resize(globals[i].size(), 0.0);
        for (std::size_t k = 0; k < c.size(); ++k) c[k] += globals[i][k];
        ++count[corpus.manifest.tracklets[i].identity];
    }
    for (auto& [id, c] : centroid)
        for (double& v : c) v /= count[id];
    for (std::size_t i = 0; i < globals.size(); ++i) {
        double best = 1e300;
        std::uint32_t best_id = 0;
        for (const auto& [id, c] : centroid) {
            double d = 0.0;
            for (std::size_t k = 0; k < c.size(); ++k) d += (c[k] - globals[i][k]) * (c[k] - globals[i][k]);
            if (d < best) best = d, best_id = id;
        }
        CHECK(best_id == corpus.manifest.tracklets[i].identity);
    }
}

TEST_CASE("misalignment is cyclic and invisible to the global feature")
{
    std::mt19937_64 rng(2);
    const auto seq = testutil::random_sequence(1, 4, 8, 3, rng);
    const FrameFeatureMap& f = seq.frames[0];
    CHECK(corrupt_misalignment(f, 0) == f);
    CHECK(corrupt_misalignment(f, 8) == f);
    CHECK(corrupt_misalignment(corrupt_misalignment(f, 2), -2) == f);

    const FrameFeatureMap shifted = corrupt_misalignment(f, 3);
    CHECK(shifted.at(1, 3, 2) == f.at(1, 0, 2));
    const Array g0 = horizontal_partition(f, 1), g1 = horizontal_partition(shifted, 1);
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(g0[c] - g1[c]) < 1e-12);
    const Array p0 = horizontal_partition(f, 2), p1 = horizontal_partition(shifted, 2);
    bool changed = false;
    for (std::size_t i = 0; i < p0.size(); ++i) changed = changed || std::abs(p0[i] - p1[i]) > 1e-9;
    CHECK(changed);
}

TEST_CASE("occlusion replaces rows with the shared distractor")
{
    GenConfig cfg;
    cfg.channels = 4;
    cfg.seed = 1;
    const Array distractor = make_distractor(cfg);
    std::mt19937_64 rng(6);
    const auto seq = testutil::random_sequence(1, 4, 8, 4, rng);
    const FrameFeatureMap& f = seq.frames[0];

    CHECK(corrupt_occlusion(f, RowRange{3, 3}, distractor) == f);

    const FrameFeatureMap all = corrupt_occlusion(f, RowRange{0, 8}, distractor);
    const Array g = horizontal_partition(all, 1);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < 8; ++r) mean += distractor(r, c);
        CHECK(g[c] == doctest::Approx(mean / 8).epsilon(1e-12));
    }

    const FrameFeatureMap bottom = corrupt_occlusion(f, RowRange{4, 8}, distractor);
    const Array before = horizontal_partition(f, 2), after = horizontal_partition(bottom, 2);
    for (std::size_t c = 0; c < 4; ++c) CHECK(before(0, c) == after(0, c));

    // Occlusion confined to part 1 of 4 touches only that part.
    const FrameFeatureMap part1 = corrupt_occlusion(f, RowRange{2, 4}, distractor);
    const Array q0 = horizontal_partition(f, 4), q1 = horizontal_partition(part1, 4);
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t c = 0; c < 4; ++c) {
            if (s == 1) continue;
            CHECK(q0(s, c) == q1(s, c));
        }

    CHECK_THROWS_AS(corrupt_occlusion(f, RowRange{6, 9}, distractor), DataError);
}

TEST_CASE("generator configuration")
{
    KeyValueConfig kv = KeyValueConfig::parse("identities = 4\nnoise = 0.1\n");
    const GenConfig cfg = GenConfig::from_config(kv);
    CHECK(cfg.identities == 4);
    CHECK(cfg.noise == 0.1);
    CHECK_THROWS_AS(GenConfig::from_config(KeyValueConfig::parse("bogus = 1\n")), ConfigError);

    GenConfig bad;
    bad.occlusion_prob = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = GenConfig{};
    bad.max_shift = 8;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = GenConfig{};
    bad.cameras = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("loading a corpus with a missing tracklet fails")
{
    TempDir dir("synth_missing");
    GenConfig cfg;
    cfg.identities = 3;
    generate_corpus(cfg, dir.path());
    std::filesystem::remove(dir / "tracklet_00002.mghf");
    CHECK_THROWS_AS(load_corpus(dir.path()), CorpusError);
    CHECK_THROWS_AS(load_corpus(dir / "nowhere"), CorpusError);
}
