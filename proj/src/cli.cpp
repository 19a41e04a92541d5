#include "mgh/cli.hpp"

#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mgh/evaluation.hpp"
#include "mgh/gradcheck_suite.hpp"
#include "mgh/inspect.hpp"
#include "mgh/log.hpp"
#include "mgh/synthdata.hpp"
#include "mgh/training.hpp"

namespace mgh {

namespace {

using nlohmann::ordered_json;

constexpr double kGradTolerance = 1e-4;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string checkpoint;
    std::string corpus;
    std::string granularities;
    std::string thresholds;
    std::string loss_toggles;
    std::string resume;
    std::string ranking_csv;
    std::optional<std::uint32_t> tracklet;
};

void add_common(CLI::App* cmd, Options& o)
{
    cmd->add_option("--config", o.config, "key = value configuration file");
    cmd->add_option("--seed", o.seed, "random seed (overrides the config)");
}

struct Commands {
    CLI::App* gen_data;
    CLI::App* train;
    CLI::App* eval;
    CLI::App* gradcheck;
    CLI::App* inspect_graph;
};

Commands build(CLI::App& app, Options& o)
{
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");
    Commands c{};

    c.gen_data = app.add_subcommand("gen-data", "generate a synthetic tracklet corpus");
    add_common(c.gen_data, o);
    c.gen_data->add_option("--out", o.out, "corpus directory")->required();

    c.train = app.add_subcommand("train", "train a model on a corpus");
    add_common(c.train, o);
    c.train->add_option("--out", o.out, "directory for losses.csv and checkpoints")->required();
    c.train->add_option("--corpus", o.corpus, "corpus directory (overrides the config)");
    c.train->add_option("--granularities", o.granularities, "partition counts, e.g. 1,2,4,8");
    c.train->add_option("--thresholds", o.thresholds, "temporal thresholds, e.g. 1,3,5");
    c.train->add_option("--loss-toggles", o.loss_toggles, "enabled losses: any of xent,tri,mi, or none");
    c.train->add_option("--resume", o.resume, "continue from a periodic checkpoint");

    c.eval = app.add_subcommand("eval", "evaluate a checkpoint on the query/gallery split");
    add_common(c.eval, o);
    c.eval->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
    c.eval->add_option("--corpus", o.corpus, "corpus directory (overrides the config)");
    c.eval->add_option("--ranking-csv", o.ranking_csv, "write the full ranking dump here");
    c.eval->add_option("--out", o.out, "export descriptors into this directory");

    c.gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every primitive and the joint loss");
    add_common(c.gradcheck, o);

    c.inspect_graph = app.add_subcommand("inspect-graph", "dump hypergraph topology and attention for one tracklet");
    add_common(c.inspect_graph, o);
    c.inspect_graph->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
    c.inspect_graph->add_option("--corpus", o.corpus, "corpus directory (overrides the config)");
    c.inspect_graph->add_option("--tracklet", o.tracklet, "tracklet id")->required();
    c.inspect_graph->add_option("--granularities", o.granularities, "only dump these partition counts");
    return c;
}

KeyValueConfig read_config(const Options& o)
{
    return o.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config);
}

// Settings that only name the corpus; shared by eval and inspect-graph.
std::string corpus_from(const Options& o)
{
    if (!o.corpus.empty()) return o.corpus;
    const KeyValueConfig kv = read_config(o);
    kv.reject_unknown({"corpus", "seed"});
    const std::string dir = kv.get_string("corpus", "");
    if (dir.empty()) throw ConfigError("no corpus given (use --corpus or a config with 'corpus')");
    return dir;
}

int cmd_gen_data(const Options& o, std::ostream& out)
{
    GenConfig cfg = GenConfig::from_config(read_config(o));
    if (o.seed) cfg.seed = *o.seed;
    cfg.validate();
    const CorpusManifest manifest = generate_corpus(cfg, o.out);
    std::size_t counts[3] = {0, 0, 0};
    for (const TrackletRecord& t : manifest.tracklets) ++counts[static_cast<int>(t.split)];
    ordered_json doc{{"corpus", o.out},
                     {"tracklets", manifest.tracklets.size()},
                     {"train", counts[0]},
                     {"query", counts[1]},
                     {"gallery", counts[2]}};
    out << doc.dump(2) << '\n';
    return 0;
}

int cmd_train(const Options& o, std::ostream& out)
{
    KeyValueConfig kv = read_config(o);
    if (o.seed) kv.set("seed", std::to_string(*o.seed));
    if (!o.corpus.empty()) kv.set("corpus", o.corpus);
    if (!o.granularities.empty()) kv.set("partitions", o.granularities);
    if (!o.thresholds.empty()) kv.set("thresholds", o.thresholds);
    if (!o.loss_toggles.empty()) kv.set("losses", o.loss_toggles);
    const TrainConfig cfg = TrainConfig::from_config(kv);
    cfg.validate();
    if (cfg.corpus.empty()) throw ConfigError("no corpus given (use --corpus or the 'corpus' key)");

    const Corpus corpus = load_corpus(cfg.corpus);
    std::optional<Checkpoint> resume;
    TrainOptions options;
    options.out_dir = o.out;
    if (!o.resume.empty()) {
        resume = load_checkpoint(o.resume);
        options.resume = &*resume;
    }
    const TrainResult result = train(corpus, cfg, options);
    const auto final_path = std::filesystem::path(o.out) / "final.ckpt";
    save_checkpoint(result.checkpoint, final_path);

    ordered_json doc;
    doc["checkpoint"] = final_path.string();
    doc["epochs"] = result.checkpoint.epoch;
    doc["steps"] = result.checkpoint.iteration;
    doc["final_loss"] = result.log.empty() ? ordered_json(nullptr) : ordered_json(result.log.back().total);
    ordered_json saved = ordered_json::array();
    for (const auto& p : result.saved) saved.push_back(p.string());
    doc["periodic_checkpoints"] = saved;
    out << doc.dump(2) << '\n';
    return 0;
}

int cmd_eval(const Options& o, std::ostream& out)
{
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const Corpus corpus = load_corpus(corpus_from(o));
    auto model = ckpt.restore_model();
    const EvaluationRun run = evaluate(corpus, *model);
    if (!o.ranking_csv.empty()) write_ranking_csv(run.instances, o.ranking_csv);
    if (!o.out.empty()) {
        std::vector<std::size_t> all = corpus.indices(Split::Query);
        const auto gallery = corpus.indices(Split::Gallery);
        all.insert(all.end(), gallery.begin(), gallery.end());
        std::vector<SequenceFeatures> seqs;
        for (std::size_t i : all) seqs.push_back(corpus.sequences[i]);
        export_descriptors(corpus, all, model->descriptors(seqs), o.out);
    }
    log::info("weight sets audited: " + std::to_string(run.audit.weight_sets) +
              ", max sum error: " + std::to_string(run.audit.max_sum_error));
    out << run.report.to_json() << '\n';
    return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out)
{
    const KeyValueConfig kv = read_config(o);
    kv.reject_unknown({"seed", "step"});
    const std::uint64_t seed = o.seed ? *o.seed : kv.get_u64("seed", 0);
    const double step = kv.get_double("step", 1e-5);
    const auto entries = run_gradcheck_suite(seed, step);

    bool passed = true;
    ordered_json list = ordered_json::array();
    for (const GradCheckEntry& e : entries) {
        passed = passed && e.report.max_rel_error < kGradTolerance;
        list.push_back({{"name", e.name},
                        {"max_rel_error", e.report.max_rel_error},
                        {"worst_coordinate", e.report.worst_coordinate},
                        {"coordinates", e.report.coordinates}});
    }
    ordered_json doc{{"seed", seed}, {"step", step}, {"tolerance", kGradTolerance}, {"checks", list}, {"passed", passed}};
    out << doc.dump(2) << '\n';
    return passed ? 0 : 2;
}

int cmd_inspect(const Options& o, std::ostream& out)
{
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const Corpus corpus = load_corpus(corpus_from(o));
    const SequenceFeatures* seq = nullptr;
    for (const SequenceFeatures& s : corpus.sequences)
        if (s.tracklet_id == *o.tracklet) seq = &s;
    if (!seq) throw CorpusError("tracklet " + std::to_string(*o.tracklet) + " is not in the corpus");

    TrainConfig cfg = ckpt.config();
    auto model = ckpt.restore_model();
    if (!o.granularities.empty()) {
        const auto wanted = parse_size_list(o.granularities, "granularities");
        const auto text = inspect_graph_json(*model, *seq);
        auto doc = ordered_json::parse(text);
        ordered_json kept = ordered_json::array();
        for (auto& g : doc["granularities"])
            if (std::find(wanted.begin(), wanted.end(), g["granularity"].get<std::size_t>()) != wanted.end()) kept.push_back(g);
        for (std::size_t p : wanted)
            if (std::find(cfg.model.partitions.begin(), cfg.model.partitions.end(), p) == cfg.model.partitions.end())
                throw ConfigError("granularity " + std::to_string(p) + " is not part of the checkpoint");
        doc["granularities"] = kept;
        out << doc.dump(2) << '\n';
        return 0;
    }
    out << inspect_graph_json(*model, *seq) << '\n';
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Multi-granular hypergraph sequence encoder", "mgh"};
    Options o;
    const Commands c = build(app, o);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (c.gen_data->parsed()) return cmd_gen_data(o, out);
        if (c.train->parsed()) return cmd_train(o, out);
        if (c.eval->parsed()) return cmd_eval(o, out);
        if (c.gradcheck->parsed()) return cmd_gradcheck(o, out);
        if (c.inspect_graph->parsed()) return cmd_inspect(o, out);
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

std::set<std::string> cli_flag_names()
{
    CLI::App app;
    Options o;
    build(app, o);
    std::set<std::string> names;
    auto collect = [&](const CLI::App* a) {
        for (const CLI::Option* opt : a->get_options())
            for (const std::string& n : opt->get_lnames()) names.insert("--" + n);
    };
    collect(&app);
    for (const CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; })) collect(sub);
    return names;
}

} // namespace mgh
