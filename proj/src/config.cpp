#include "mgh/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mgh {

namespace {

std::string trim(const std::string& s)
{
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string format_double(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const std::vector<std::size_t>& values)
{
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(values[i]);
    }
    return out;
}

std::uint64_t parse_u64(const std::string& text, const std::string& key)
{
    std::uint64_t v = 0;
    const std::string t = trim(text);
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
        throw ConfigError("invalid integer for '" + key + "': '" + text + "'");
    }
    return v;
}

} // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text)
{
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (!cfg.entries_.emplace(key, value).second) throw ConfigError("duplicate config key '" + key + "'");
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse(text.str());
}

const std::string& KeyValueConfig::raw(const std::string& key) const
{
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

void KeyValueConfig::reject_unknown(const std::set<std::string>& known) const
{
    for (const auto& [key, value] : entries_) {
        if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const
{
    return has(key) ? static_cast<std::size_t>(parse_u64(raw(key), key)) : fallback;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const
{
    return has(key) ? parse_u64(raw(key), key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const
{
    if (!has(key)) return fallback;
    const std::string& text = raw(key);
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("invalid number for '" + key + "': '" + text + "'");
    }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const
{
    if (!has(key)) return fallback;
    const std::string& v = raw(key);
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("invalid boolean for '" + key + "': '" + v + "'");
}

std::vector<std::size_t> KeyValueConfig::get_list(const std::string& key, std::vector<std::size_t> fallback) const
{
    return has(key) ? parse_size_list(raw(key), key) : fallback;
}

std::string KeyValueConfig::get_string(const std::string& key, std::string fallback) const
{
    return has(key) ? raw(key) : fallback;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what)
{
    std::vector<std::size_t> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(static_cast<std::size_t>(parse_u64(item, what)));
    if (out.empty()) throw ConfigError("empty list for '" + what + "'");
    return out;
}

LossToggles parse_loss_toggles(const std::string& text)
{
    LossToggles toggles{false, false, false};
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item == "xent") toggles.xent = true;
        else if (item == "tri") toggles.triplet = true;
        else if (item == "mi") toggles.mutual_info = true;
        else if (item == "none" || item.empty()) continue;
        else throw ConfigError("unknown loss term '" + item + "' (expected xent, tri, mi or none)");
    }
    return toggles;
}

std::string format_loss_toggles(const LossToggles& toggles)
{
    std::vector<std::string> parts;
    if (toggles.xent) parts.emplace_back("xent");
    if (toggles.triplet) parts.emplace_back("tri");
    if (toggles.mutual_info) parts.emplace_back("mi");
    if (parts.empty()) return "none";
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
    return out;
}

void ModelConfig::validate() const
{
    if (partitions.empty()) throw ConfigError("partitions must not be empty");
    for (std::size_t i = 0; i < partitions.size(); ++i) {
        if (partitions[i] == 0 || (i > 0 && partitions[i] <= partitions[i - 1])) {
            throw ConfigError("partitions must be strictly increasing positive integers");
        }
    }
    if (thresholds.empty()) throw ConfigError("thresholds must not be empty");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (thresholds[i] == 0 || (i > 0 && thresholds[i] <= thresholds[i - 1])) {
            throw ConfigError("thresholds must be strictly increasing positive integers");
        }
    }
    if (neighbors < 1) throw ConfigError("K must be at least 1");
    if (layers < 1) throw ConfigError("L must be at least 1");
}

const std::set<std::string>& TrainConfig::keys()
{
    static const std::set<std::string> known{
        "partitions", "thresholds", "K",      "L",         "graph",           "attention",        "T",
        "P",          "K_tr",       "lr",     "weight_decay", "critic_lr",    "margin",           "epochs",
        "iters_per_epoch", "checkpoint_every", "seed", "losses", "corpus"};
    return known;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv)
{
    kv.reject_unknown(keys());
    TrainConfig c;
    c.model.partitions = kv.get_list("partitions", c.model.partitions);
    c.model.thresholds = kv.get_list("thresholds", c.model.thresholds);
    c.model.neighbors = kv.get_size("K", c.model.neighbors);
    c.model.layers = kv.get_size("L", c.model.layers);
    c.model.graph = kv.get_bool("graph", c.model.graph);
    c.model.attention = kv.get_bool("attention", c.model.attention);
    c.frames = kv.get_size("T", c.frames);
    c.identities_per_batch = kv.get_size("P", c.identities_per_batch);
    c.tracklets_per_identity = kv.get_size("K_tr", c.tracklets_per_identity);
    c.lr = kv.get_double("lr", c.lr);
    c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
    c.critic_lr = kv.get_double("critic_lr", c.critic_lr);
    c.margin = kv.get_double("margin", c.margin);
    c.epochs = kv.get_size("epochs", c.epochs);
    c.iters_per_epoch = kv.get_size("iters_per_epoch", c.iters_per_epoch);
    c.checkpoint_every = kv.get_size("checkpoint_every", c.checkpoint_every);
    c.seed = kv.get_u64("seed", c.seed);
    if (kv.has("losses")) c.losses = parse_loss_toggles(kv.raw("losses"));
    c.corpus = kv.get_string("corpus", c.corpus);
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) { return from_config(KeyValueConfig::load(path)); }

void TrainConfig::validate() const
{
    model.validate();
    if (frames < 1) throw ConfigError("T must be at least 1");
    if (identities_per_batch < 2) throw ConfigError("P must be at least 2");
    if (tracklets_per_identity < 1) throw ConfigError("K_tr must be at least 1");
    if (losses.triplet && tracklets_per_identity < 2) throw ConfigError("the triplet loss needs K_tr >= 2");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
    if (!(critic_lr > 0.0)) throw ConfigError("critic_lr must be positive");
    if (margin < 0.0) throw ConfigError("margin must be nonnegative");
    if (iters_per_epoch < 1) throw ConfigError("iters_per_epoch must be at least 1");
}

std::string TrainConfig::to_text() const
{
    std::ostringstream out;
    out << "partitions = " << join(model.partitions) << "\n"
        << "thresholds = " << join(model.thresholds) << "\n"
        << "K = " << model.neighbors << "\n"
        << "L = " << model.layers << "\n"
        << "graph = " << (model.graph ? "on" : "off") << "\n"
        << "attention = " << (model.attention ? "on" : "off") << "\n"
        << "T = " << frames << "\n"
        << "P = " << identities_per_batch << "\n"
        << "K_tr = " << tracklets_per_identity << "\n"
        << "lr = " << format_double(lr) << "\n"
        << "weight_decay = " << format_double(weight_decay) << "\n"
        << "critic_lr = " << format_double(critic_lr) << "\n"
        << "margin = " << format_double(margin) << "\n"
        << "epochs = " << epochs << "\n"
        << "iters_per_epoch = " << iters_per_epoch << "\n"
        << "checkpoint_every = " << checkpoint_every << "\n"
        << "seed = " << seed << "\n"
        << "losses = " << format_loss_toggles(losses) << "\n";
    return out.str();
}

std::uint64_t fnv1a64(const std::string& text)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace mgh
