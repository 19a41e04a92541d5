#include "mgh/featstage.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mgh {

static_assert(std::endian::native == std::endian::little, "MGHF I/O assumes a little-endian host");

FrameFeatureMap::FrameFeatureMap(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : data_({channels, height, width}, fill)
{
}

FrameFeatureMap::FrameFeatureMap(Array data) : data_(std::move(data))
{
    if (data_.rank() != 3) throw ShapeError("frame feature map must be C×H×W, got " + shape_string(data_.shape()));
}

void SequenceFeatures::validate() const
{
    if (frames.empty()) throw DataError("tracklet " + std::to_string(tracklet_id) + " has no frames");
    const Shape& first = frames.front().data().shape();
    for (std::size_t t = 1; t < frames.size(); ++t) {
        if (frames[t].data().shape() != first) {
            throw DataError("tracklet " + std::to_string(tracklet_id) + ": frame " + std::to_string(t) + " has shape " +
                            shape_string(frames[t].data().shape()) + ", expected " + shape_string(first));
        }
    }
}

namespace {

constexpr std::array<char, 4> kMagic{'M', 'G', 'H', 'F'};

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path)
{
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated header in " + path.string());
    return v;
}

} // namespace

SequenceFeatures load_feature_sequence(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size())) throw IoError("truncated header in " + path.string());
    if (magic != kMagic) throw FormatError(path.string() + ": bad magic, not an MGHF file");
    const std::uint32_t version = get_u32(in, path);
    if (version != kFeatureFormatVersion) {
        throw FormatError(path.string() + ": unsupported MGHF version " + std::to_string(version));
    }
    SequenceFeatures seq;
    seq.tracklet_id = get_u32(in, path);
    seq.camera_id = get_u32(in, path);
    const std::uint32_t T = get_u32(in, path);
    const std::uint32_t C = get_u32(in, path);
    const std::uint32_t H = get_u32(in, path);
    const std::uint32_t W = get_u32(in, path);
    if (T == 0 || C == 0 || H == 0 || W == 0) throw FormatError(path.string() + ": zero dimension in header");

    const std::size_t per_frame = std::size_t{C} * H * W;
    std::vector<float> buffer(per_frame);
    seq.frames.reserve(T);
    for (std::uint32_t t = 0; t < T; ++t) {
        if (!in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(per_frame * sizeof(float)))) {
            throw IoError(path.string() + ": truncated payload at frame " + std::to_string(t));
        }
        FrameFeatureMap frame(C, H, W);
        auto values = frame.data().values();
        for (std::size_t i = 0; i < per_frame; ++i) {
            if (!std::isfinite(buffer[i])) {
                throw DataError(path.string() + ": non-finite value in frame " + std::to_string(t));
            }
            values[i] = static_cast<double>(buffer[i]);
        }
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

void save_feature_sequence(const SequenceFeatures& seq, const std::filesystem::path& path)
{
    seq.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    const FrameFeatureMap& first = seq.frames.front();
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, kFeatureFormatVersion);
    put_u32(out, seq.tracklet_id);
    put_u32(out, seq.camera_id);
    put_u32(out, static_cast<std::uint32_t>(seq.frames.size()));
    put_u32(out, static_cast<std::uint32_t>(first.channels()));
    put_u32(out, static_cast<std::uint32_t>(first.height()));
    put_u32(out, static_cast<std::uint32_t>(first.width()));
    std::vector<float> buffer;
    for (const FrameFeatureMap& frame : seq.frames) {
        buffer.assign(frame.data().values().begin(), frame.data().values().end());
        out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

Array horizontal_partition(const FrameFeatureMap& frame, std::size_t parts)
{
    const std::size_t C = frame.channels(), H = frame.height(), W = frame.width();
    if (parts == 0 || H % parts != 0) {
        throw PartitionError("cannot split height " + std::to_string(H) + " into " + std::to_string(parts) +
                             " equal parts");
    }
    const std::size_t rows = H / parts;
    const double inv = 1.0 / static_cast<double>(rows * W);
    Array out({parts, C}, 0.0);
    for (std::size_t s = 0; s < parts; ++s)
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::size_t h = s * rows; h < (s + 1) * rows; ++h)
                for (std::size_t w = 0; w < W; ++w) acc += frame.at(c, h, w);
            out(s, c) = acc * inv;
        }
    return out;
}

NodeSet build_node_set(const SequenceFeatures& seq, std::size_t parts)
{
    seq.validate();
    const std::size_t C = seq.frames.front().channels();
    NodeSet nodes;
    nodes.granularity = parts;
    nodes.frames = seq.frames.size();
    nodes.features = Array({nodes.size(), C}, 0.0);
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        const Array pooled = horizontal_partition(seq.frames[t], parts);
        for (std::size_t s = 0; s < parts; ++s) {
            std::copy_n(pooled.row(s).begin(), C, nodes.features.row(nodes.index(t, s)).begin());
        }
    }
    return nodes;
}

std::map<std::size_t, NodeSet> build_node_sets(const SequenceFeatures& seq, const std::vector<std::size_t>& partitions)
{
    std::map<std::size_t, NodeSet> out;
    for (std::size_t p : partitions) out.emplace(p, build_node_set(seq, p));
    return out;
}

} // namespace mgh
