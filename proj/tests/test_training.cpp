#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "mgh/training.hpp"
#include "support.hpp"

using namespace mgh;
using testutil::TempDir;

namespace {

struct SmallCorpus {
    TempDir dir{"training_corpus"};
    Corpus corpus;

    SmallCorpus()
    {
        GenConfig g;
        g.identities = 8;
        g.tracklets_per_identity = 4;
        g.frames = 6;
        g.channels = 8;
        g.height = 4;
        g.width = 2;
        g.seed = 21;
        generate_corpus(g, dir.path());
        corpus = load_corpus(dir.path());
    }
};

const Corpus& small_corpus()
{
    static SmallCorpus instance;
    return instance.corpus;
}

TrainConfig small_config()
{
    TrainConfig c;
    c.model.partitions = {1, 2};
    c.model.thresholds = {1, 3};
    c.model.neighbors = 2;
    c.model.layers = 1;
    c.frames = 4;
    c.identities_per_batch = 2;
    c.tracklets_per_identity = 2;
    c.epochs = 3;
    c.iters_per_epoch = 2;
    c.lr = 1e-3;
    c.seed = 9;
    return c;
}

bool same_frames(const SequenceFeatures& a, const SequenceFeatures& b, std::size_t offset, std::size_t count)
{
    for (std::size_t j = 0; j < count; ++j)
        if (!(a.frames[j] == b.frames[(offset + j) % b.frames.size()])) return false;
    return true;
}

} // namespace

TEST_CASE("training set groups train tracklets by dense labels")
{
    const TrainingSet set = TrainingSet::from_corpus(small_corpus());
    CHECK(set.classes() == 4);
    CHECK(set.tracklets.size() == 16);
    for (std::size_t label = 0; label < set.classes(); ++label) {
        CHECK(set.by_label[label].size() == 4);
        for (std::size_t idx : set.by_label[label]) CHECK(set.labels[idx] == label);
    }
}

TEST_CASE("PK sampling")
{
    const TrainingSet set = TrainingSet::from_corpus(small_corpus());
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const Batch b = sample_batch(set, BatchSpec{3, 2, 4}, rng);
        REQUIRE(b.sequences.size() == 6);
        std::map<std::size_t, std::set<std::uint32_t>> tracklets_of;
        for (std::size_t i = 0; i < 6; ++i) {
            tracklets_of[b.labels[i]].insert(b.sequences[i].tracklet_id);
            CHECK(b.sequences[i].length() == 4);
            // The window is a contiguous run inside its source tracklet.
            const SequenceFeatures* source = nullptr;
            for (const SequenceFeatures* s : set.tracklets)
                if (s->tracklet_id == b.sequences[i].tracklet_id) source = s;
            REQUIRE(source != nullptr);
            bool found = false;
            for (std::size_t start = 0; start + 4 <= source->length(); ++start)
                found = found || same_frames(b.sequences[i], *source, start, 4);
            CHECK(found);
        }
        CHECK(tracklets_of.size() == 3);
        for (const auto& [label, ids] : tracklets_of) CHECK(ids.size() == 2);
    }

    // More draws than tracklets falls back to sampling with replacement.
    const Batch many = sample_batch(set, BatchSpec{2, 6, 2}, rng);
    CHECK(many.sequences.size() == 12);
    CHECK_THROWS_AS(sample_batch(set, BatchSpec{5, 2, 4}, rng), CorpusError);
}

TEST_CASE("windows wrap around short tracklets")
{
    std::mt19937_64 rng(2);
    const SequenceFeatures seq = testutil::random_sequence(3, 2, 2, 1, rng, 4);
    const SequenceFeatures w = window(seq, 1, 5);
    REQUIRE(w.length() == 5);
    const std::size_t want[] = {1, 2, 0, 1, 2};
    for (std::size_t j = 0; j < 5; ++j) CHECK(w.frames[j] == seq.frames[want[j]]);
    CHECK(w.tracklet_id == 4);

    const TrainingSet set = TrainingSet::from_corpus(small_corpus());
    const Batch b = sample_batch(set, BatchSpec{2, 2, 10}, rng);
    for (const auto& s : b.sequences) CHECK(s.length() == 10);
}

TEST_CASE("optimizer closed forms")
{
    Parameter p("p", Array::vector({1.0, -2.0, 0.5}));
    Parameter* ps[] = {&p};
    OptimizerState still;
    still.step(ps, 0.1, 0.0);
    CHECK(p.value.storage() == std::vector<double>{1.0, -2.0, 0.5});

    // The first bias-corrected step moves each coordinate by lr against its gradient's sign.
    OptimizerState first;
    p.grad = Array::vector({3.0, -0.2, 1e-3});
    first.step(ps, 0.01, 0.0);
    CHECK(p.value[0] == doctest::Approx(0.99).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(-1.99).epsilon(1e-6));
    CHECK(p.value[2] == doctest::Approx(0.49).epsilon(1e-4));
    for (double g : p.grad.values()) CHECK(g == 0.0);
    CHECK(first.steps() == 1);

    // With zero gradients only the decay acts: θ shrinks geometrically.
    Parameter q("q", Array::vector({2.0}));
    Parameter* qs[] = {&q};
    OptimizerState decay;
    for (int i = 0; i < 10; ++i) decay.step(qs, 0.1, 0.5);
    CHECK(q.value[0] == doctest::Approx(2.0 * std::pow(0.95, 10)).epsilon(1e-12));

    Parameter r("r", Array::vector({0.0}));
    Parameter* rs[] = {&r};
    OptimizerState up;
    r.grad = Array::vector({2.0});
    up.ascend(rs, 0.1);
    CHECK(r.value[0] == doctest::Approx(0.1).epsilon(1e-6));

    r.grad = Array::vector({std::numeric_limits<double>::quiet_NaN()});
    try {
        up.step(rs, 0.1, 0.0);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("'r'") != std::string::npos);
    }
}

TEST_CASE("learning-rate schedule")
{
    CHECK(lr_at(0) == 3e-4);
    CHECK(lr_at(99) == 3e-4);
    CHECK(lr_at(100) == doctest::Approx(3e-5));
    CHECK(lr_at(250) == doctest::Approx(3e-6));
    CHECK(lr_at(150, 1.0) == doctest::Approx(0.1));
}

TEST_CASE("train config text round trip and validation")
{
    TrainConfig c = small_config();
    c.losses.mutual_info = false;
    c.corpus = "some/dir";
    const TrainConfig back = TrainConfig::from_config(KeyValueConfig::parse(c.to_text()));
    CHECK(back.to_text() == c.to_text());
    CHECK(trajectory_hash(back) == trajectory_hash(c));

    TrainConfig longer = c;
    longer.epochs = 50;
    longer.checkpoint_every = 5;
    CHECK(trajectory_hash(longer) == trajectory_hash(c));
    longer.lr = 0.5;
    CHECK(trajectory_hash(longer) != trajectory_hash(c));

    try {
        TrainConfig::from_config(KeyValueConfig::parse("learning_rate = 1\n"));
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }
    TrainConfig bad = small_config();
    bad.margin = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("checkpoint serialization")
{
    TrainConfig c = small_config();
    c.epochs = 1;
    const Checkpoint ck = train(small_corpus(), c).checkpoint;
    CHECK(ck.epoch == 1);
    CHECK(ck.iteration == 2);
    CHECK(ck.encoder_steps == 2);
    CHECK(ck.critic_steps == 2);
    CHECK(!ck.optimizer.empty());

    const auto bytes = ck.serialize();
    CHECK(Checkpoint::deserialize(bytes) == ck);
    CHECK(Checkpoint::deserialize(bytes).serialize() == bytes);

    TempDir dir("ckpt");
    save_checkpoint(ck, dir / "a.ckpt");
    CHECK(load_checkpoint(dir / "a.ckpt") == ck);
    CHECK(ck.config().to_text() == c.to_text());

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    try {
        Checkpoint::deserialize(truncated);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    auto version = bytes;
    version[4] = 77;
    CHECK_THROWS_AS(Checkpoint::deserialize(version), FormatError);
    auto magic = bytes;
    magic[0] = 'Z';
    CHECK_THROWS_AS(Checkpoint::deserialize(magic), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);

    // The restored model carries the stored values.
    auto model = ck.restore_model();
    const auto params = model->parameters();
    REQUIRE(params.size() == ck.parameters.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(params[i]->name == ck.parameters[i].name);
        CHECK(params[i]->value == ck.parameters[i].value);
    }
}

TEST_CASE("zero epochs returns the seeded initialization")
{
    TrainConfig c = small_config();
    c.epochs = 0;
    const TrainResult r = train(small_corpus(), c);
    CHECK(r.log.empty());
    std::mt19937_64 rng(c.seed);
    MGHModel fresh(c.model, 8, 4, rng);
    const auto params = fresh.parameters();
    REQUIRE(params.size() == r.checkpoint.parameters.size());
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i]->value == r.checkpoint.parameters[i].value);
}

TEST_CASE("training is deterministic and resumable")
{
    const TrainConfig c = small_config();
    TempDir a("train_a"), b("train_b"), resumed("train_resumed");
    const TrainResult ra = train(small_corpus(), c, {a.path()});
    const TrainResult rb = train(small_corpus(), c, {b.path()});
    CHECK(ra.checkpoint.serialize() == rb.checkpoint.serialize());
    CHECK(testutil::read_text(a / "losses.csv") == testutil::read_text(b / "losses.csv"));

    TrainConfig periodic = c;
    periodic.checkpoint_every = 1;
    const TrainResult rp = train(small_corpus(), periodic, {resumed.path()});
    REQUIRE(rp.saved.size() == 3);
    CHECK(rp.saved[0].filename() == "checkpoint_epoch_0001.ckpt");
    // Same trajectory; only the stored config text differs.
    CHECK(rp.checkpoint.parameters == ra.checkpoint.parameters);
    CHECK(rp.checkpoint.optimizer == ra.checkpoint.optimizer);
    CHECK(rp.checkpoint.rng_state == ra.checkpoint.rng_state);
    CHECK(rp.checkpoint.config_hash == ra.checkpoint.config_hash);

    const Checkpoint mid = load_checkpoint(rp.saved[0]);
    TempDir cont("train_cont");
    std::filesystem::copy_file(resumed / "losses.csv", cont / "losses.csv");
    // Truncate the copied log back to the checkpointed step before resuming.
    {
        const std::string text = testutil::read_text(cont / "losses.csv");
        std::size_t pos = 0;
        for (int line = 0; line < 3; ++line) pos = text.find('\n', pos) + 1;
        std::ofstream(cont / "losses.csv", std::ios::trunc) << text.substr(0, pos);
    }
    TrainOptions opts{cont.path()};
    opts.resume = &mid;
    const TrainResult rr = train(small_corpus(), c, opts);
    CHECK(rr.log.size() == 4);
    CHECK(rr.checkpoint.serialize() == ra.checkpoint.serialize());
    CHECK(testutil::read_text(cont / "losses.csv") == testutil::read_text(a / "losses.csv"));

    TrainConfig other = c;
    other.margin = 0.5;
    CHECK_THROWS_AS(train(small_corpus(), other, opts), ConfigError);
}

TEST_CASE("the loss log and the joint loss trend")
{
    TrainConfig c = small_config();
    c.epochs = 40;
    c.iters_per_epoch = 3;
    c.lr = 3e-3;
    TempDir dir("train_trend");
    std::size_t callbacks = 0;
    TrainOptions opts{dir.path()};
    opts.on_step = [&](const StepLog&) { ++callbacks; };
    const TrainResult r = train(small_corpus(), c, opts);
    REQUIRE(r.log.size() == 120);
    CHECK(callbacks == 120);
    for (const StepLog& s : r.log) CHECK(s.total == doctest::Approx(s.xent + s.triplet + s.mutual_info));

    const std::string csv = testutil::read_text(dir / "losses.csv");
    CHECK(csv.rfind("step,L_xent,L_tri,L_MI,L_all\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 121);

    double early = 0.0, late = 0.0;
    for (std::size_t i = 0; i < 30; ++i) {
        early += r.log[i].total;
        late += r.log[90 + i].total;
    }
    CHECK(late < early);
}

TEST_CASE("toggled-off terms are excluded from the joint loss")
{
    TrainConfig c = small_config();
    c.losses = {true, false, false};
    const TrainResult r = train(small_corpus(), c);
    for (const StepLog& s : r.log) CHECK(s.total == doctest::Approx(s.xent));
}

TEST_CASE("training errors")
{
    Corpus corpus = small_corpus();
    TrainConfig c = small_config();
    c.identities_per_batch = 5;
    CHECK_THROWS_AS(train(corpus, c), CorpusError);

    c = small_config();
    c.model.partitions = {1, 3};
    CHECK_THROWS_AS(train(corpus, c), PartitionError);

    // An overflowing feature value surfaces as a numeric error at the first step.
    for (auto& seq : corpus.sequences)
        for (auto& frame : seq.frames) frame.data()[0] = 1e300;
    try {
        train(corpus, small_config());
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("step 0") != std::string::npos);
        CHECK(msg.find("last checkpoint: none") != std::string::npos);
    }
}

TEST_CASE("a fresh critic detects dependence on held-out pairs")
{
    std::mt19937_64 rng(4);
    const Array x = testutil::random_array({32, 4}, rng), hx = testutil::random_array({32, 4}, rng);
    const Array noise = testutil::random_array({32, 4}, rng), hnoise = testutil::random_array({32, 4}, rng);
    const double dependent = heldout_mi_estimate(x, x, hx, hx, 200, 0.05, 1);
    const double independent = heldout_mi_estimate(x, noise, hx, hnoise, 200, 0.05, 1);
    CHECK(dependent > independent + 0.1);
    CHECK(heldout_mi_estimate(x, x, hx, hx, 0, 0.05, 1) == doctest::Approx(-2 * std::log(2.0)));
}

TEST_CASE("column standardization and a scale-free held-out probe")
{
    const Array ref = Array::matrix(4, 2, {1, 5, 3, 5, 5, 5, 7, 5});
    const Array z = standardize_columns(ref, ref);
    double mean = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < 4; ++r) mean += z(r, 0), sq += z(r, 0) * z(r, 0);
    CHECK(mean == doctest::Approx(0.0));
    CHECK(sq / 4 == doctest::Approx(1.0));
    for (std::size_t r = 0; r < 4; ++r) CHECK(z(r, 1) == 0.0);
    const Array other = standardize_columns(Array::matrix(1, 2, {4, 6}), ref);
    CHECK(other(0, 0) == doctest::Approx(0.0));
    CHECK(other(0, 1) == doctest::Approx(1.0));
    CHECK_THROWS_AS(standardize_columns(ref, Array({4, 3}, 0.0)), ShapeError);

    std::mt19937_64 rng(6);
    const Array x = testutil::random_array({24, 3}, rng), hx = testutil::random_array({24, 3}, rng);
    Array y = x, hy = hx;
    for (double& v : y.values()) v = 40.0 * v + 3.0;
    for (double& v : hy.values()) v = 40.0 * v + 3.0;
    CHECK(heldout_mi_estimate(x, y, hx, hy, 50, 0.05, 2) ==
          doctest::Approx(heldout_mi_estimate(x, x, hx, hx, 50, 0.05, 2)).epsilon(1e-9));
}
