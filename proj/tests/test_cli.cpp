#include <regex>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mgh/cli.hpp"
#include "support.hpp"

using testutil::TempDir;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args)
{
    args.insert(args.begin(), "mgh");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = mgh::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

void write(const std::filesystem::path& path, const std::string& text) { std::ofstream(path) << text; }

// One small trained setup shared by the tests below.
struct Workspace {
    TempDir dir{"cli"};
    std::string corpus, checkpoint;

    Workspace()
    {
        write(dir / "gen.cfg", "identities = 6\nframes = 8\nchannels = 8\nheight = 8\nwidth = 2\n");
        write(dir / "train.cfg", "partitions = 1,2\nthresholds = 1,3,5\nK = 3\nL = 1\nP = 2\nK_tr = 2\nepochs = 2\n"
                                 "iters_per_epoch = 2\n");
        corpus = (dir / "corpus").string();
        const Result g = run({"gen-data", "--config", (dir / "gen.cfg").string(), "--out", corpus, "--seed", "4"});
        REQUIRE(g.code == 0);
        const Result t =
            run({"train", "--config", (dir / "train.cfg").string(), "--corpus", corpus, "--out", (dir / "run").string()});
        REQUIRE(t.code == 0);
        checkpoint = json::parse(t.out).at("checkpoint").get<std::string>();
    }
};

Workspace& workspace()
{
    static Workspace ws;
    return ws;
}

} // namespace

TEST_CASE("help and parse errors")
{
    const Result help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("gen-data") != std::string::npos);
    CHECK(run({"train", "--help"}).code == 0);

    const Result all = run({"--help-all"});
    CHECK(all.code == 0);
    for (const std::string& flag : mgh::cli_flag_names()) CHECK_MESSAGE(all.out.find(flag) != std::string::npos, flag);

    CHECK(run({}).code == 1);
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({"gradcheck", "--bogus"}).code == 1);
    CHECK(run({"gen-data"}).code == 1);
    CHECK(run({"gen-data", "--out", "x", "--seed", "abc"}).code == 1);
}

TEST_CASE("invalid config keys are named")
{
    TempDir dir("cli_keys");
    write(dir / "bad.cfg", "identities = 4\ncolour = blue\n");
    const Result g = run({"gen-data", "--config", (dir / "bad.cfg").string(), "--out", (dir / "c").string()});
    CHECK(g.code == 1);
    CHECK(g.err.find("colour") != std::string::npos);

    write(dir / "bad_train.cfg", "learning_rate = 1\n");
    const Result t = run({"train", "--config", (dir / "bad_train.cfg").string(), "--out", (dir / "r").string()});
    CHECK(t.code == 1);
    CHECK(t.err.find("learning_rate") != std::string::npos);

    write(dir / "bad_grad.cfg", "step = 1e-5\ntolerance = 1\n");
    const Result gc = run({"gradcheck", "--config", (dir / "bad_grad.cfg").string()});
    CHECK(gc.code == 1);
    CHECK(gc.err.find("tolerance") != std::string::npos);

    CHECK(run({"gen-data", "--config", (dir / "missing.cfg").string(), "--out", (dir / "c").string()}).code == 1);
}

TEST_CASE("flag documentation matches the parser")
{
    const std::string readme = testutil::read_text(std::filesystem::path(MGH_SOURCE_DIR) / "README.md");
    const auto begin = readme.find("## Command-line flags");
    REQUIRE(begin != std::string::npos);
    const auto end = readme.find("\n## ", begin + 1);
    const std::string section = readme.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
    std::set<std::string> documented;
    const std::regex flag("`(--[a-z][a-z-]*)`");
    for (std::sregex_iterator it(section.begin(), section.end(), flag), stop; it != stop; ++it) documented.insert((*it)[1]);
    CHECK(documented == mgh::cli_flag_names());
}

TEST_CASE("gen-data writes a corpus and is deterministic")
{
    TempDir dir("cli_gen");
    write(dir / "g.cfg", "identities = 4\n");
    const Result a = run({"gen-data", "--config", (dir / "g.cfg").string(), "--out", (dir / "a").string(), "--seed", "3"});
    const Result b = run({"gen-data", "--config", (dir / "g.cfg").string(), "--out", (dir / "b").string(), "--seed", "3"});
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    const json doc = json::parse(a.out);
    CHECK(doc.at("tracklets") == 16);
    CHECK(testutil::read_bytes(dir / "a" / "manifest.json") == testutil::read_bytes(dir / "b" / "manifest.json"));
    CHECK(testutil::read_bytes(dir / "a" / "tracklet_00005.mghf") == testutil::read_bytes(dir / "b" / "tracklet_00005.mghf"));
}

TEST_CASE("gradcheck reports every check")
{
    const Result r = run({"gradcheck", "--seed", "7"});
    CHECK(r.code == 0);
    const json doc = json::parse(r.out);
    CHECK(doc.at("seed") == 7);
    CHECK(doc.at("passed") == true);
    REQUIRE(doc.at("checks").size() > 20);
    for (const auto& c : doc.at("checks")) CHECK(c.at("max_rel_error").get<double>() < 1e-4);
    CHECK(run({"gradcheck", "--seed", "7"}).out == r.out);
}

TEST_CASE("train and eval")
{
    Workspace& ws = workspace();
    CHECK(std::filesystem::exists(ws.checkpoint));

    const Result e = run({"eval", "--checkpoint", ws.checkpoint, "--corpus", ws.corpus, "--ranking-csv",
                          (ws.dir / "rank.csv").string(), "--out", (ws.dir / "desc").string()});
    REQUIRE(e.code == 0);
    const json report = json::parse(e.out);
    for (const char* key : {"mAP", "top1", "top5", "top20", "per_query_AP"}) CHECK(report.contains(key));
    CHECK(report.at("per_query_AP").size() == 6);
    CHECK(std::filesystem::exists(ws.dir / "rank.csv"));
    CHECK(std::filesystem::exists(ws.dir / "desc" / "tracklet_00012.f32"));

    // The corpus may also come from a config file.
    write(ws.dir / "eval.cfg", "corpus = " + ws.corpus + "\n");
    const Result again = run({"eval", "--checkpoint", ws.checkpoint, "--config", (ws.dir / "eval.cfg").string()});
    CHECK(again.code == 0);
    CHECK(again.out == e.out);

    write(ws.dir / "eval_bad.cfg", "corpus = " + ws.corpus + "\nlr = 1\n");
    const Result bad = run({"eval", "--checkpoint", ws.checkpoint, "--config", (ws.dir / "eval_bad.cfg").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("lr") != std::string::npos);

    CHECK(run({"eval", "--checkpoint", (ws.dir / "nope.ckpt").string(), "--corpus", ws.corpus}).code == 1);
}

TEST_CASE("train flags override the config")
{
    Workspace& ws = workspace();
    const Result r = run({"train", "--config", (ws.dir / "train.cfg").string(), "--corpus", ws.corpus, "--out",
                          (ws.dir / "flags").string(), "--granularities", "1,4", "--thresholds", "1", "--loss-toggles",
                          "xent", "--seed", "5"});
    REQUIRE(r.code == 0);
    const json doc = json::parse(r.out);
    CHECK(doc.at("steps") == 4);
    const std::string csv = testutil::read_text(ws.dir / "flags" / "losses.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

    const Result bad = run({"train", "--config", (ws.dir / "train.cfg").string(), "--corpus", ws.corpus, "--out",
                            (ws.dir / "flags2").string(), "--loss-toggles", "xent,everything"});
    CHECK(bad.code == 1);
}

TEST_CASE("numeric failure exits with code 2")
{
    TempDir dir("cli_nan");
    write(dir / "gen.cfg",
          "identities = 6\nframes = 8\nchannels = 8\nheight = 8\nwidth = 2\nsignature_strength = 1e30\n"
          "camera_strength = 1e30\n");
    REQUIRE(run({"gen-data", "--config", (dir / "gen.cfg").string(), "--out", (dir / "c").string()}).code == 0);
    write(dir / "t.cfg", "partitions = 1,2\nthresholds = 1,3\nK = 2\nL = 2\nP = 2\nK_tr = 2\nepochs = 5\nlr = 1e30\n");
    const Result r = run({"train", "--config", (dir / "t.cfg").string(), "--corpus", (dir / "c").string(), "--out",
                          (dir / "run").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("last checkpoint") != std::string::npos);
}

TEST_CASE("inspect-graph")
{
    Workspace& ws = workspace();
    const std::vector<std::string> args{"inspect-graph", "--checkpoint", ws.checkpoint, "--corpus", ws.corpus,
                                        "--tracklet", "14"};
    const Result a = run(args);
    REQUIRE(a.code == 0);
    CHECK(run(args).out == a.out);

    const json doc = json::parse(a.out);
    CHECK(doc.at("tracklet_id") == 14);
    REQUIRE(doc.at("granularities").size() == 2);
    for (const auto& g : doc.at("granularities")) {
        const std::size_t p = g.at("granularity");
        CHECK(g.at("nodes").size() == 8 * p);
        double total = 0.0;
        for (double v : g.at("alpha")) total += v;
        CHECK(std::abs(total - 1.0) < 1e-9);
        if (p == 1) CHECK(g.at("edges").size() == 24);
        for (const auto& e : g.at("edges")) {
            CHECK(e.at("gamma_weights_last_layer").size() == e.at("members").size());
            for (double v : e.at("gamma_weights_last_layer")) {
                CHECK(v > 0.0);
                CHECK(v <= 1.0);
            }
        }
    }

    auto filtered_args = args;
    filtered_args.insert(filtered_args.end(), {"--granularities", "2"});
    const json only = json::parse(run(filtered_args).out);
    REQUIRE(only.at("granularities").size() == 1);
    CHECK(only.at("granularities")[0].at("granularity") == 2);

    auto wrong = args;
    wrong.insert(wrong.end(), {"--granularities", "8"});
    CHECK(run(wrong).code == 1);

    auto missing = args;
    missing.back() = "4000";
    const Result m = run(missing);
    CHECK(m.code == 1);
    CHECK(m.err.find("4000") != std::string::npos);
}
