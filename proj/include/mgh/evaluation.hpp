#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mgh/diffcore.hpp"
#include "mgh/model.hpp"
#include "mgh/synthdata.hpp"

namespace mgh {

/// d(x, y) = 1 − cos(x, y) for every query row against every gallery row.
Array pairwise_cosine_distance(const Array& queries, const Array& gallery);

struct RankingInstance {
    std::uint32_t query_id = 0;
    std::uint32_t query_identity = 0;
    std::uint32_t query_camera = 0;
    std::vector<std::uint32_t> gallery_ids;
    std::vector<std::uint32_t> gallery_identities;
    std::vector<std::uint32_t> gallery_cameras;
    std::vector<double> distances;
    std::vector<bool> valid; // false for same identity and same camera

    /// Valid gallery indices sorted by (distance, index).
    std::vector<std::size_t> ranking() const;
    bool relevant(std::size_t g) const { return gallery_identities[g] == query_identity; }
};

/// Fills `valid` from the cross-camera rule.
void apply_camera_mask(RankingInstance& instance);

/// Fraction of queries whose first relevant hit lands within the top r.
std::map<std::size_t, double> cmc_curve(const std::vector<RankingInstance>& instances, const std::vector<std::size_t>& ranks);

double average_precision(const RankingInstance& instance);
double mean_average_precision(const std::vector<RankingInstance>& instances);

struct EvaluationReport {
    double mean_ap = 0.0;
    double top1 = 0.0;
    double top5 = 0.0;
    double top20 = 0.0;
    std::vector<std::pair<std::uint32_t, double>> per_query_ap; // (query tracklet id, AP)

    std::string to_json() const;
    static EvaluationReport from_json(const std::string& text);
};

struct RankingRow {
    std::uint32_t query_id;
    std::size_t rank; // 1-based
    std::uint32_t gallery_id;
    double distance;
    bool relevant;
};

struct EvaluationRun {
    EvaluationReport report;
    std::vector<RankingInstance> instances;
    WeightAudit audit;
};

/// Descriptors for every query and gallery tracklet, then the full protocol.
EvaluationRun evaluate(const Corpus& corpus, MGHModel& model);

/// Scores precomputed descriptors; rows follow `query` and `gallery` order.
EvaluationRun evaluate_descriptors(const Corpus& corpus, const std::vector<std::size_t>& query,
                                   const std::vector<std::size_t>& gallery, const Array& query_desc,
                                   const Array& gallery_desc);

std::vector<RankingRow> ranking_rows(const std::vector<RankingInstance>& instances);
void write_ranking_csv(const std::vector<RankingInstance>& instances, const std::filesystem::path& path);

/// One `<tracklet>.f32` payload plus a `<tracklet>.json` sidecar per row.
void export_descriptors(const Corpus& corpus, const std::vector<std::size_t>& indices, const Array& descriptors,
                        const std::filesystem::path& dir);

} // namespace mgh
