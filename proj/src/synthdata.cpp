#include "mgh/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mgh/log.hpp"

namespace mgh {

using nlohmann::json;

const std::set<std::string>& GenConfig::keys()
{
    static const std::set<std::string> known{
        "identities", "tracklets_per_identity", "cameras", "frames",        "channels",
        "height",     "width",                  "signature_strength", "camera_strength", "view_strength",
        "noise",      "occlusion_prob",         "max_shift", "train_fraction", "seed"};
    return known;
}

GenConfig GenConfig::from_config(const KeyValueConfig& kv)
{
    kv.reject_unknown(keys());
    GenConfig c;
    c.identities = kv.get_size("identities", c.identities);
    c.tracklets_per_identity = kv.get_size("tracklets_per_identity", c.tracklets_per_identity);
    c.cameras = kv.get_size("cameras", c.cameras);
    c.frames = kv.get_size("frames", c.frames);
    c.channels = kv.get_size("channels", c.channels);
    c.height = kv.get_size("height", c.height);
    c.width = kv.get_size("width", c.width);
    c.signature_strength = kv.get_double("signature_strength", c.signature_strength);
    c.camera_strength = kv.get_double("camera_strength", c.camera_strength);
    c.view_strength = kv.get_double("view_strength", c.view_strength);
    c.noise = kv.get_double("noise", c.noise);
    c.occlusion_prob = kv.get_double("occlusion_prob", c.occlusion_prob);
    c.max_shift = kv.get_size("max_shift", c.max_shift);
    c.train_fraction = kv.get_double("train_fraction", c.train_fraction);
    c.seed = kv.get_u64("seed", c.seed);
    c.validate();
    return c;
}

void GenConfig::validate() const
{
    if (identities < 1 || tracklets_per_identity < 1 || frames < 1 || channels < 1 || height < 1 || width < 1) {
        throw ConfigError("corpus counts and dimensions must be positive");
    }
    if (cameras < 2) throw ConfigError("at least two cameras are required");
    if (occlusion_prob < 0.0 || occlusion_prob > 1.0) throw ConfigError("occlusion_prob must lie in [0, 1]");
    if (max_shift >= height) throw ConfigError("max_shift must be smaller than height");
    if (noise < 0.0 || signature_strength < 0.0 || camera_strength < 0.0 || view_strength < 0.0) {
        throw ConfigError("strengths and noise must be nonnegative");
    }
    if (train_fraction < 0.0 || train_fraction > 1.0) throw ConfigError("train_fraction must lie in [0, 1]");
    if (train_fraction < 1.0 && tracklets_per_identity < 2) {
        throw ConfigError("test identities need at least two tracklets (one query, one gallery)");
    }
}

std::string split_name(Split split)
{
    switch (split) {
    case Split::Train: return "train";
    case Split::Query: return "query";
    case Split::Gallery: return "gallery";
    }
    return "train";
}

Split parse_split(const std::string& name)
{
    if (name == "train") return Split::Train;
    if (name == "query") return Split::Query;
    if (name == "gallery") return Split::Gallery;
    throw FormatError("unknown split '" + name + "'");
}

std::string CorpusManifest::to_json() const
{
    json doc;
    doc["format"] = "mgh-corpus";
    doc["version"] = 1;
    doc["channels"] = channels;
    doc["height"] = height;
    doc["width"] = width;
    json list = json::array();
    for (const TrackletRecord& t : tracklets) {
        json entry;
        entry["path"] = t.path;
        entry["tracklet_id"] = t.tracklet_id;
        entry["identity"] = t.identity;
        entry["camera"] = t.camera;
        entry["split"] = split_name(t.split);
        json frames = json::array();
        for (std::size_t f = 0; f < t.corruptions.size(); ++f) {
            const FrameCorruption& c = t.corruptions[f];
            json rec;
            rec["frame"] = f;
            rec["shift"] = c.shift;
            rec["occluded_rows"] = c.occluded ? json::array({c.occluded->begin, c.occluded->end}) : json(nullptr);
            frames.push_back(std::move(rec));
        }
        entry["corruptions"] = std::move(frames);
        list.push_back(std::move(entry));
    }
    doc["tracklets"] = std::move(list);
    return doc.dump(1);
}

CorpusManifest CorpusManifest::from_json(const std::string& text)
{
    try {
        const json doc = json::parse(text);
        if (doc.at("format") != "mgh-corpus") throw FormatError("manifest: unexpected format tag");
        CorpusManifest m;
        m.channels = doc.at("channels").get<std::size_t>();
        m.height = doc.at("height").get<std::size_t>();
        m.width = doc.at("width").get<std::size_t>();
        for (const json& entry : doc.at("tracklets")) {
            TrackletRecord t;
            t.path = entry.at("path").get<std::string>();
            t.tracklet_id = entry.at("tracklet_id").get<std::uint32_t>();
            t.identity = entry.at("identity").get<std::uint32_t>();
            t.camera = entry.at("camera").get<std::uint32_t>();
            t.split = parse_split(entry.at("split").get<std::string>());
            if (entry.contains("corruptions")) {
                for (const json& rec : entry.at("corruptions")) {
                    FrameCorruption c;
                    c.shift = rec.at("shift").get<int>();
                    const json& rows = rec.at("occluded_rows");
                    if (!rows.is_null()) c.occluded = RowRange{rows.at(0).get<std::size_t>(), rows.at(1).get<std::size_t>()};
                    t.corruptions.push_back(c);
                }
            }
            m.tracklets.push_back(std::move(t));
        }
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
}

FrameFeatureMap corrupt_misalignment(const FrameFeatureMap& frame, int shift)
{
    const std::size_t C = frame.channels(), H = frame.height(), W = frame.width();
    const auto h = static_cast<long>(H);
    FrameFeatureMap out(C, H, W);
    for (std::size_t c = 0; c < C; ++c)
        for (long r = 0; r < h; ++r) {
            const long src = ((r - shift) % h + h) % h;
            for (std::size_t w = 0; w < W; ++w) out.at(c, static_cast<std::size_t>(r), w) = frame.at(c, static_cast<std::size_t>(src), w);
        }
    return out;
}

FrameFeatureMap corrupt_occlusion(const FrameFeatureMap& frame, RowRange rows, const Array& distractor)
{
    if (rows.empty()) {
        log::warn("occlusion with an empty row range leaves the frame unchanged");
        return frame;
    }
    const std::size_t C = frame.channels(), H = frame.height(), W = frame.width();
    if (rows.end > H) throw DataError("occluded rows exceed frame height " + std::to_string(H));
    if (distractor.rank() != 2 || distractor.rows() != H || distractor.cols() != C) {
        throw ShapeError("distractor " + shape_string(distractor.shape()) + " does not match frame height/channels");
    }
    FrameFeatureMap out = frame;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = rows.begin; r < rows.end; ++r)
            for (std::size_t w = 0; w < W; ++w) out.at(c, r, w) = distractor(r, c);
    return out;
}

namespace {

Array gaussian(Shape shape, double sigma, std::mt19937_64& rng)
{
    Array out(std::move(shape), 0.0);
    if (sigma == 0.0) return out;
    std::normal_distribution<double> dist(0.0, sigma);
    for (double& v : out.values()) v = dist(rng);
    return out;
}

} // namespace

Array make_distractor(const GenConfig& cfg)
{
    std::mt19937_64 rng(cfg.seed ^ 0x0cc1'd0e5'd157'7ac7ULL);
    return gaussian({cfg.height, cfg.channels}, cfg.signature_strength, rng);
}

CorpusManifest generate_corpus(const GenConfig& cfg, const std::filesystem::path& out_dir)
{
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create corpus directory " + out_dir.string());

    const std::size_t C = cfg.channels, H = cfg.height, W = cfg.width;
    std::mt19937_64 rng(cfg.seed);
    std::vector<Array> signatures;
    for (std::size_t i = 0; i < cfg.identities; ++i) signatures.push_back(gaussian({H, C}, cfg.signature_strength, rng));
    std::vector<Array> camera_offsets;
    for (std::size_t k = 0; k < cfg.cameras; ++k) camera_offsets.push_back(gaussian({C}, cfg.camera_strength, rng));
    std::vector<Array> view_offsets;
    for (std::size_t i = 0; i < cfg.identities * cfg.cameras; ++i) view_offsets.push_back(gaussian({C}, cfg.view_strength, rng));
    const Array distractor = make_distractor(cfg);

    const auto train_ids = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.identities)));
    const std::size_t queries_per_id = std::max<std::size_t>(1, cfg.tracklets_per_identity / 2);

    CorpusManifest manifest;
    manifest.channels = C;
    manifest.height = H;
    manifest.width = W;
    for (std::size_t id = 0; id < cfg.identities; ++id) {
        for (std::size_t j = 0; j < cfg.tracklets_per_identity; ++j) {
            const std::size_t index = id * cfg.tracklets_per_identity + j;
            const std::size_t cam = j % cfg.cameras;
            std::seed_seq seq_seed{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                                   static_cast<std::uint32_t>(index)};
            std::mt19937_64 local(seq_seed);
            std::uniform_real_distribution<double> coin(0.0, 1.0);
            std::uniform_int_distribution<int> shift_dist(-static_cast<int>(cfg.max_shift), static_cast<int>(cfg.max_shift));
            std::normal_distribution<double> noise(0.0, cfg.noise > 0.0 ? cfg.noise : 1.0);

            FrameFeatureMap clean(C, H, W);
            const Array& sig = signatures[id];
            const Array& cam_off = camera_offsets[cam];
            const Array& view_off = view_offsets[id * cfg.cameras + cam];
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t r = 0; r < H; ++r)
                    for (std::size_t w = 0; w < W; ++w) clean.at(c, r, w) = sig(r, c) + cam_off[c] + view_off[c];

            TrackletRecord record;
            char name[64];
            std::snprintf(name, sizeof name, "tracklet_%05zu.mghf", index);
            record.path = name;
            record.tracklet_id = static_cast<std::uint32_t>(index);
            record.identity = static_cast<std::uint32_t>(id);
            record.camera = static_cast<std::uint32_t>(cam);
            record.split = id < train_ids ? Split::Train : (j < queries_per_id ? Split::Query : Split::Gallery);

            SequenceFeatures seq;
            seq.tracklet_id = record.tracklet_id;
            seq.camera_id = record.camera;
            for (std::size_t t = 0; t < cfg.frames; ++t) {
                FrameCorruption corruption;
                corruption.shift = cfg.max_shift > 0 ? shift_dist(local) : 0;
                FrameFeatureMap frame = corrupt_misalignment(clean, corruption.shift);
                if (cfg.occlusion_prob > 0.0 && coin(local) < cfg.occlusion_prob) {
                    const std::size_t max_len = std::max<std::size_t>(1, H / 2);
                    const std::size_t len = std::uniform_int_distribution<std::size_t>(1, max_len)(local);
                    const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, H - len)(local);
                    corruption.occluded = RowRange{begin, begin + len};
                    frame = corrupt_occlusion(frame, *corruption.occluded, distractor);
                }
                if (cfg.noise > 0.0) {
                    for (double& v : frame.data().values()) v += noise(local);
                }
                seq.frames.push_back(std::move(frame));
                record.corruptions.push_back(corruption);
            }
            save_feature_sequence(seq, out_dir / record.path);
            manifest.tracklets.push_back(std::move(record));
        }
    }

    std::ofstream out(out_dir / kManifestFile, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + out_dir.string());
    out << manifest.to_json() << '\n';
    if (!out) throw IoError("manifest write failed in " + out_dir.string());
    return manifest;
}

std::vector<std::size_t> Corpus::indices(Split split) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.tracklets.size(); ++i)
        if (manifest.tracklets[i].split == split) out.push_back(i);
    return out;
}

Corpus load_corpus(const std::filesystem::path& dir)
{
    const auto manifest_path = dir / kManifestFile;
    std::ifstream in(manifest_path);
    if (!in) throw CorpusError("no manifest at " + manifest_path.string());
    std::ostringstream text;
    text << in.rdbuf();

    Corpus corpus;
    corpus.root = dir;
    corpus.manifest = CorpusManifest::from_json(text.str());
    for (const TrackletRecord& t : corpus.manifest.tracklets) {
        const auto path = dir / t.path;
        if (!std::filesystem::exists(path)) throw CorpusError("manifest references missing file " + path.string());
        SequenceFeatures seq = load_feature_sequence(path);
        if (seq.tracklet_id != t.tracklet_id || seq.camera_id != t.camera) {
            throw CorpusError(path.string() + ": header ids disagree with the manifest");
        }
        const FrameFeatureMap& f = seq.frames.front();
        if (f.channels() != corpus.manifest.channels || f.height() != corpus.manifest.height ||
            f.width() != corpus.manifest.width) {
            throw CorpusError(path.string() + ": dimensions disagree with the manifest");
        }
        corpus.sequences.push_back(std::move(seq));
    }
    return corpus;
}

} // namespace mgh
