#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mgh/config.hpp"
#include "mgh/featstage.hpp"

namespace mgh {

/// Synthetic tracklet corpus parameters. A frame is the identity's
/// row-structured signature broadcast over columns, plus a per-camera and a
/// per-(identity, camera) channel offset, then misalignment, occlusion and
/// Gaussian noise.
struct GenConfig {
    std::size_t identities = 20;
    std::size_t tracklets_per_identity = 4;
    std::size_t cameras = 2;
    std::size_t frames = 8;
    std::size_t channels = 16;
    std::size_t height = 8;
    std::size_t width = 4;
    double signature_strength = 1.0;
    double camera_strength = 0.5;
    double view_strength = 0.3;
    double noise = 0.3;
    double occlusion_prob = 0.3;
    std::size_t max_shift = 2;
    /// Fraction of identities (taken in id order) used for training.
    double train_fraction = 0.5;
    std::uint64_t seed = 0;

    static const std::set<std::string>& keys();
    static GenConfig from_config(const KeyValueConfig& kv);
    void validate() const;
};

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0; // exclusive

    bool empty() const { return end <= begin; }
};

struct FrameCorruption {
    int shift = 0;
    std::optional<RowRange> occluded;
};

enum class Split { Train, Query, Gallery };

std::string split_name(Split split);
Split parse_split(const std::string& name);

struct TrackletRecord {
    std::string path; // relative to the corpus directory
    std::uint32_t tracklet_id = 0;
    std::uint32_t identity = 0;
    std::uint32_t camera = 0;
    Split split = Split::Train;
    std::vector<FrameCorruption> corruptions;
};

struct CorpusManifest {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<TrackletRecord> tracklets;

    std::string to_json() const;
    static CorpusManifest from_json(const std::string& text);
};

inline constexpr const char* kManifestFile = "manifest.json";

/// Rows cyclically shifted down by `shift`: out row r = in row (r − shift) mod H.
FrameFeatureMap corrupt_misalignment(const FrameFeatureMap& frame, int shift);

/// Replaces rows [rows.begin, rows.end) with the matching rows of the
/// corpus-wide distractor signature ([H × C]), broadcast over columns.
FrameFeatureMap corrupt_occlusion(const FrameFeatureMap& frame, RowRange rows, const Array& distractor);

/// The corpus-wide occluder signature, [H × C].
Array make_distractor(const GenConfig& cfg);

/// Writes one MGHF file per tracklet plus manifest.json into `out_dir`.
CorpusManifest generate_corpus(const GenConfig& cfg, const std::filesystem::path& out_dir);

/// A manifest with every tracklet loaded.
struct Corpus {
    std::filesystem::path root;
    CorpusManifest manifest;
    std::vector<SequenceFeatures> sequences; // parallel to manifest.tracklets

    /// Indices into `sequences` with the given split.
    std::vector<std::size_t> indices(Split split) const;
};

/// Reads manifest.json and every referenced tracklet. Throws CorpusError for
/// a missing file or a manifest that disagrees with a tracklet header.
Corpus load_corpus(const std::filesystem::path& dir);

} // namespace mgh
