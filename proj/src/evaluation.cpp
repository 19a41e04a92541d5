#include "mgh/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace mgh {

using nlohmann::json;
using nlohmann::ordered_json;

Array pairwise_cosine_distance(const Array& queries, const Array& gallery)
{
    if (queries.rank() != 2 || gallery.rank() != 2 || queries.cols() != gallery.cols()) {
        throw ShapeError("pairwise_cosine_distance: descriptor shapes " + shape_string(queries.shape()) + " and " +
                         shape_string(gallery.shape()) + " disagree");
    }
    Array out({queries.rows(), gallery.rows()}, 0.0);
    for (std::size_t q = 0; q < queries.rows(); ++q)
        for (std::size_t g = 0; g < gallery.rows(); ++g) out(q, g) = 1.0 - cosine_similarity(queries.row(q), gallery.row(g));
    return out;
}

std::vector<std::size_t> RankingInstance::ranking() const
{
    std::vector<std::size_t> order;
    for (std::size_t g = 0; g < distances.size(); ++g)
        if (valid.empty() || valid[g]) order.push_back(g);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
    return order;
}

void apply_camera_mask(RankingInstance& instance)
{
    instance.valid.assign(instance.distances.size(), true);
    for (std::size_t g = 0; g < instance.distances.size(); ++g) {
        if (instance.gallery_identities[g] == instance.query_identity && instance.gallery_cameras[g] == instance.query_camera)
            instance.valid[g] = false;
    }
}

namespace {

[[noreturn]] void no_relevant(const RankingInstance& instance)
{
    throw ProtocolError("query " + std::to_string(instance.query_id) + " has no valid relevant gallery entry");
}

std::size_t first_hit(const RankingInstance& instance, const std::vector<std::size_t>& order)
{
    for (std::size_t r = 0; r < order.size(); ++r)
        if (instance.relevant(order[r])) return r + 1;
    no_relevant(instance);
}

} // namespace

std::map<std::size_t, double> cmc_curve(const std::vector<RankingInstance>& instances, const std::vector<std::size_t>& ranks)
{
    if (instances.empty()) throw ProtocolError("cmc_curve: no queries");
    std::vector<std::size_t> hits;
    hits.reserve(instances.size());
    for (const RankingInstance& inst : instances) hits.push_back(first_hit(inst, inst.ranking()));
    std::map<std::size_t, double> curve;
    for (std::size_t r : ranks) {
        const auto within = std::count_if(hits.begin(), hits.end(), [r](std::size_t h) { return h <= r; });
        curve[r] = static_cast<double>(within) / static_cast<double>(instances.size());
    }
    return curve;
}

double average_precision(const RankingInstance& instance)
{
    const auto order = instance.ranking();
    std::size_t found = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (!instance.relevant(order[r])) continue;
        ++found;
        total += static_cast<double>(found) / static_cast<double>(r + 1);
    }
    if (found == 0) no_relevant(instance);
    return total / static_cast<double>(found);
}

double mean_average_precision(const std::vector<RankingInstance>& instances)
{
    if (instances.empty()) throw ProtocolError("mean_average_precision: no queries");
    double total = 0.0;
    for (const RankingInstance& inst : instances) total += average_precision(inst);
    return total / static_cast<double>(instances.size());
}

std::string EvaluationReport::to_json() const
{
    ordered_json doc;
    doc["mAP"] = mean_ap;
    doc["top1"] = top1;
    doc["top5"] = top5;
    doc["top20"] = top20;
    ordered_json per = ordered_json::array();
    for (const auto& [id, ap] : per_query_ap) per.push_back({{"query_id", id}, {"AP", ap}});
    doc["per_query_AP"] = per;
    return doc.dump(2);
}

EvaluationReport EvaluationReport::from_json(const std::string& text)
{
    try {
        const json doc = json::parse(text);
        EvaluationReport r;
        r.mean_ap = doc.at("mAP").get<double>();
        r.top1 = doc.at("top1").get<double>();
        r.top5 = doc.at("top5").get<double>();
        r.top20 = doc.at("top20").get<double>();
        for (const json& e : doc.at("per_query_AP"))
            r.per_query_ap.emplace_back(e.at("query_id").get<std::uint32_t>(), e.at("AP").get<double>());
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("evaluation report: ") + e.what());
    }
}

EvaluationRun evaluate_descriptors(const Corpus& corpus, const std::vector<std::size_t>& query,
                                   const std::vector<std::size_t>& gallery, const Array& query_desc,
                                   const Array& gallery_desc)
{
    if (query.empty()) throw ProtocolError("evaluation needs at least one query tracklet");
    if (gallery.empty()) throw ProtocolError("evaluation needs at least one gallery tracklet");
    const Array dist = pairwise_cosine_distance(query_desc, gallery_desc);

    EvaluationRun run;
    for (std::size_t qi = 0; qi < query.size(); ++qi) {
        const TrackletRecord& q = corpus.manifest.tracklets[query[qi]];
        RankingInstance inst;
        inst.query_id = q.tracklet_id;
        inst.query_identity = q.identity;
        inst.query_camera = q.camera;
        for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
            const TrackletRecord& g = corpus.manifest.tracklets[gallery[gi]];
            inst.gallery_ids.push_back(g.tracklet_id);
            inst.gallery_identities.push_back(g.identity);
            inst.gallery_cameras.push_back(g.camera);
            inst.distances.push_back(dist(qi, gi));
        }
        apply_camera_mask(inst);
        run.instances.push_back(std::move(inst));
    }

    const auto curve = cmc_curve(run.instances, {1, 5, 20});
    run.report.top1 = curve.at(1);
    run.report.top5 = curve.at(5);
    run.report.top20 = curve.at(20);
    double total = 0.0;
    for (const RankingInstance& inst : run.instances) {
        const double ap = average_precision(inst);
        run.report.per_query_ap.emplace_back(inst.query_id, ap);
        total += ap;
    }
    run.report.mean_ap = total / static_cast<double>(run.instances.size());
    return run;
}

namespace {

std::vector<SequenceFeatures> gather(const Corpus& corpus, const std::vector<std::size_t>& indices)
{
    std::vector<SequenceFeatures> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(corpus.sequences[i]);
    return out;
}

} // namespace

EvaluationRun evaluate(const Corpus& corpus, MGHModel& model)
{
    const auto query = corpus.indices(Split::Query);
    const auto gallery = corpus.indices(Split::Gallery);
    if (query.empty()) throw ProtocolError("corpus has no query tracklets");
    if (gallery.empty()) throw ProtocolError("corpus has no gallery tracklets");
    WeightAudit audit;
    const Array qd = model.descriptors(gather(corpus, query), &audit);
    const Array gd = model.descriptors(gather(corpus, gallery), &audit);
    EvaluationRun run = evaluate_descriptors(corpus, query, gallery, qd, gd);
    run.audit = audit;
    return run;
}

std::vector<RankingRow> ranking_rows(const std::vector<RankingInstance>& instances)
{
    std::vector<RankingRow> rows;
    for (const RankingInstance& inst : instances) {
        const auto order = inst.ranking();
        for (std::size_t r = 0; r < order.size(); ++r) {
            const std::size_t g = order[r];
            rows.push_back({inst.query_id, r + 1, inst.gallery_ids[g], inst.distances[g], inst.relevant(g)});
        }
    }
    return rows;
}

void write_ranking_csv(const std::vector<RankingInstance>& instances, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write ranking dump " + path.string());
    out << "query_id,rank,gallery_id,distance,relevant\n";
    char buf[64];
    for (const RankingRow& row : ranking_rows(instances)) {
        std::snprintf(buf, sizeof buf, "%.17g", row.distance);
        out << row.query_id << ',' << row.rank << ',' << row.gallery_id << ',' << buf << ',' << (row.relevant ? 1 : 0)
            << '\n';
    }
}

void export_descriptors(const Corpus& corpus, const std::vector<std::size_t>& indices, const Array& descriptors,
                        const std::filesystem::path& dir)
{
    if (descriptors.rank() != 2 || descriptors.rows() != indices.size())
        throw ShapeError("export_descriptors: one descriptor row per tracklet is required");
    std::filesystem::create_directories(dir);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const TrackletRecord& rec = corpus.manifest.tracklets[indices[r]];
        char stem[32];
        std::snprintf(stem, sizeof stem, "tracklet_%05u", rec.tracklet_id);
        std::vector<float> values(descriptors.cols());
        for (std::size_t c = 0; c < values.size(); ++c) values[c] = static_cast<float>(descriptors(r, c));
        std::ofstream bin(dir / (std::string(stem) + ".f32"), std::ios::binary | std::ios::trunc);
        bin.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
        if (!bin) throw IoError("cannot write descriptor for tracklet " + std::to_string(rec.tracklet_id));
        const json sidecar{{"tracklet_id", rec.tracklet_id}, {"camera_id", rec.camera}, {"dims", {values.size()}}};
        std::ofstream meta(dir / (std::string(stem) + ".json"), std::ios::trunc);
        meta << sidecar.dump(2) << '\n';
    }
}

} // namespace mgh
