#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mgh/losses.hpp"

namespace mgh {

/// Line-oriented `key = value` file. '#' starts a comment; blank lines are
/// ignored; a repeated key is an error.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    const std::string& raw(const std::string& key) const;
    void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
    const std::map<std::string, std::string>& entries() const { return entries_; }

    /// Throws ConfigError naming the first key not in `known`.
    void reject_unknown(const std::set<std::string>& known) const;

    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::size_t> get_list(const std::string& key, std::vector<std::size_t> fallback) const;
    std::string get_string(const std::string& key, std::string fallback) const;

private:
    std::map<std::string, std::string> entries_;
};

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what);
LossToggles parse_loss_toggles(const std::string& text);
std::string format_loss_toggles(const LossToggles& toggles);

struct ModelConfig {
    std::vector<std::size_t> partitions{1, 2, 4, 8};
    std::vector<std::size_t> thresholds{1, 3, 5};
    std::size_t neighbors = 3; // K
    std::size_t layers = 2;    // L
    /// false: no hyperedges, nodes are updated in isolation.
    bool graph = true;
    /// false: per-sequence mean instead of learned node attention.
    bool attention = true;

    void validate() const;
};

struct TrainConfig {
    ModelConfig model;
    std::size_t frames = 8;          // T
    std::size_t identities_per_batch = 8; // P
    std::size_t tracklets_per_identity = 4; // K_tr
    double lr = 3e-4;
    double weight_decay = 5e-4;
    double critic_lr = 1e-4;
    double margin = 0.3;
    std::size_t epochs = 300;
    std::size_t iters_per_epoch = 1;
    std::size_t checkpoint_every = 0; // epochs; 0 disables periodic checkpoints
    std::uint64_t seed = 0;
    LossToggles losses;
    std::string corpus;

    static const std::set<std::string>& keys();
    static TrainConfig from_config(const KeyValueConfig& kv);
    static TrainConfig load(const std::filesystem::path& path);
    void validate() const;
    /// Canonical `key = value` text; from_config(parse(to_text())) round-trips.
    std::string to_text() const;
};

/// FNV-1a, 64-bit.
std::uint64_t fnv1a64(const std::string& text);

} // namespace mgh
