#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "mgh/diffcore.hpp"

namespace mgh {

/// One frame's backbone output: a C×H×W array.
class FrameFeatureMap {
public:
    FrameFeatureMap() = default;
    FrameFeatureMap(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
    explicit FrameFeatureMap(Array data);

    std::size_t channels() const { return data_.dim(0); }
    std::size_t height() const { return data_.dim(1); }
    std::size_t width() const { return data_.dim(2); }

    double& at(std::size_t c, std::size_t h, std::size_t w) { return data_[(c * height() + h) * width() + w]; }
    double at(std::size_t c, std::size_t h, std::size_t w) const { return data_[(c * height() + h) * width() + w]; }

    const Array& data() const { return data_; }
    Array& data() { return data_; }

    bool operator==(const FrameFeatureMap&) const = default;

private:
    Array data_;
};

struct SequenceFeatures {
    std::uint32_t tracklet_id = 0;
    std::uint32_t camera_id = 0;
    std::vector<FrameFeatureMap> frames;

    std::size_t length() const { return frames.size(); }
    /// Throws DataError unless T ≥ 1 and every frame shares (C, H, W).
    void validate() const;
};

/// Part-level node features of one granularity, frame-major: node i belongs
/// to frame i / p and part i % p.
struct NodeSet {
    std::size_t granularity = 1;
    std::size_t frames = 0;
    Array features; // [T·p × C]

    std::size_t size() const { return frames * granularity; }
    std::size_t frame_of(std::size_t node) const { return node / granularity; }
    std::size_t part_of(std::size_t node) const { return node % granularity; }
    std::size_t index(std::size_t frame, std::size_t part) const { return frame * granularity + part; }
};

/// Reads one tracklet in the little-endian MGHF layout:
/// "MGHF", u32 version = 1, u32 tracklet id, u32 camera id, u32 T, C, H, W,
/// then T·C·H·W f32 values (frame-major, row-major within a frame).
SequenceFeatures load_feature_sequence(const std::filesystem::path& path);
/// Writes the MGHF layout. Values are narrowed to f32.
void save_feature_sequence(const SequenceFeatures& seq, const std::filesystem::path& path);

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

/// Average-pools p equal horizontal stripes. Row s of the result is the
/// per-channel mean over rows [s·H/p, (s+1)·H/p) and all columns.
Array horizontal_partition(const FrameFeatureMap& frame, std::size_t parts);

std::map<std::size_t, NodeSet> build_node_sets(const SequenceFeatures& seq, const std::vector<std::size_t>& partitions);
NodeSet build_node_set(const SequenceFeatures& seq, std::size_t parts);

} // namespace mgh
