#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mgh/config.hpp"
#include "mgh/model.hpp"
#include "mgh/synthdata.hpp"

namespace mgh {

struct BatchSpec {
    std::size_t identities = 8;  // P
    std::size_t per_identity = 4; // K_tr
    std::size_t frames = 8;       // T

    std::size_t size() const { return identities * per_identity; }
};

/// Training tracklets grouped by identity; labels are dense 0..classes-1 in
/// ascending identity order.
struct TrainingSet {
    std::vector<const SequenceFeatures*> tracklets;
    std::vector<std::size_t> labels;
    std::vector<std::vector<std::size_t>> by_label; // indices into `tracklets`

    static TrainingSet from_corpus(const Corpus& corpus);
    std::size_t classes() const { return by_label.size(); }
};

struct Batch {
    std::vector<SequenceFeatures> sequences;
    std::vector<std::size_t> labels;
};

/// PK sampling: P identities without replacement, K_tr tracklets each
/// (with replacement only when an identity has fewer than K_tr), and a
/// contiguous T-frame window per tracklet, wrapping around short tracklets.
Batch sample_batch(const TrainingSet& set, const BatchSpec& spec, std::mt19937_64& rng);

/// Frames [start, start + T) of `seq`, indices taken modulo its length.
SequenceFeatures window(const SequenceFeatures& seq, std::size_t start, std::size_t frames);

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer with decoupled weight decay:
/// θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ. Gradients are zeroed after each step.
class OptimizerState {
public:
    OptimizerState() = default;
    explicit OptimizerState(AdamSettings settings) : settings_(settings) {}

    void step(std::span<Parameter* const> params, double lr, double weight_decay);
    /// Ascent variant: steps along +grad.
    void ascend(std::span<Parameter* const> params, double lr);

    std::uint64_t steps() const { return steps_; }
    const std::map<std::string, std::pair<Array, Array>>& moments() const { return moments_; }

    void restore(std::uint64_t steps, std::map<std::string, std::pair<Array, Array>> moments);

private:
    void apply(std::span<Parameter* const> params, double lr, double weight_decay, double direction);

    AdamSettings settings_;
    std::uint64_t steps_ = 0;
    std::map<std::string, std::pair<Array, Array>> moments_; // name -> (m, v)
};

/// base · 10^(−⌊epoch / 100⌋).
double lr_at(std::size_t epoch, double base = 3e-4);

struct NamedArray {
    std::string name;
    Array value;

    bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string config_text;
    std::uint64_t config_hash = 0;
    std::uint64_t epoch = 0;
    std::uint64_t iteration = 0;
    std::uint64_t dim = 0;
    std::uint64_t classes = 0;
    std::string rng_state;
    std::vector<NamedArray> parameters;
    std::uint64_t encoder_steps = 0;
    std::uint64_t critic_steps = 0;
    std::vector<NamedArray> optimizer; // "m:<param>" / "v:<param>", encoder then critic

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(std::span<const std::uint8_t> bytes);

    TrainConfig config() const;
    /// Rebuilds the model with the stored parameter values.
    std::unique_ptr<MGHModel> restore_model() const;

    bool operator==(const Checkpoint&) const = default;
};

/// Hash over the settings that shape the optimization trajectory (the
/// canonical config text with epochs and checkpoint_every cleared).
std::uint64_t trajectory_hash(const TrainConfig& config);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct StepLog {
    std::size_t step = 0;
    double xent = 0.0;
    double triplet = 0.0;
    double mutual_info = 0.0;
    double total = 0.0;
};

struct TrainOptions {
    /// Destination for losses.csv and periodic checkpoints; empty disables both.
    std::filesystem::path out_dir;
    const Checkpoint* resume = nullptr;
    std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepLog> log;
    std::vector<std::filesystem::path> saved;
};

/// Epoch loop of sample → forward → losses → backward → critic ascent →
/// encoder descent. Deterministic for a given seed. Throws NumericError on a
/// non-finite loss.
TrainResult train(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options = {});

/// Per-column z-scores of `x` using the mean and standard deviation of
/// `reference`. Constant columns are only centered.
Array standardize_columns(const Array& x, const Array& reference);

/// Fits a fresh bilinear critic for `steps` ascent steps on (first, second)
/// and returns the JSD estimate it achieves on the held-out pair. All four
/// inputs are standardized with the fitting pair's column statistics, so the
/// result does not depend on the scale of either feature space.
double heldout_mi_estimate(const Array& first, const Array& second, const Array& heldout_first,
                           const Array& heldout_second, std::size_t steps, double lr, std::uint64_t seed);

} // namespace mgh
