#pragma once

#include <map>
#include <random>
#include <span>
#include <vector>

#include "mgh/aggregate.hpp"
#include "mgh/config.hpp"
#include "mgh/featstage.hpp"
#include "mgh/hypergraph.hpp"
#include "mgh/losses.hpp"

namespace mgh {

/// Everything one forward pass produces for one granularity.
struct GranularityPass {
    HypergraphTopology topology; // disjoint union over the batch
    std::vector<std::size_t> node_offsets; // sequence s owns rows [off[s], off[s+1])
    PropagationResult propagation;
    PooledFeatures pooled;
};

struct ForwardPass {
    std::map<std::size_t, GranularityPass> granularities;
    std::map<std::size_t, Var> features; // h_p per sequence, [S × d]

    /// Concatenated descriptors in ascending-p order, [S × G·d].
    Array descriptors() const;
};

/// Largest deviation of any γ or α weight set from summing to one, and the
/// smallest weight seen.
struct WeightAudit {
    double max_sum_error = 0.0;
    double min_weight = 1.0;
    std::size_t weight_sets = 0;

    void merge(const WeightAudit& other);
};

WeightAudit audit_weights(const ForwardPass& pass);

/// Hypergraph encoder for every configured granularity, plus the training
/// heads (classifiers and MI critics).
class MGHModel {
public:
    MGHModel(ModelConfig config, std::size_t dim, std::size_t classes, std::mt19937_64& rng);

    const ModelConfig& config() const { return config_; }
    std::size_t dim() const { return dim_; }
    std::size_t classes() const { return classes_; }

    PropagationStack& stack(std::size_t p) { return stacks_.at(p); }
    ClassifierHead& head(std::size_t p) { return heads_.at(p); }
    CriticMap& critics() { return critics_; }

    /// Encoder, attention and classifier parameters, in a fixed order.
    std::vector<Parameter*> encoder_parameters();
    std::vector<Parameter*> critic_parameters();
    /// encoder_parameters() followed by critic_parameters().
    std::vector<Parameter*> parameters();

    HypergraphTopology build_topology(const NodeSet& nodes) const;

    ForwardPass forward(Tape& tape, std::span<const SequenceFeatures> batch);

    /// Inference-only descriptors, processed in chunks of `chunk` sequences.
    Array descriptors(std::span<const SequenceFeatures> sequences, WeightAudit* audit = nullptr,
                      std::size_t chunk = 32);

private:
    ModelConfig config_;
    std::size_t dim_;
    std::size_t classes_;
    std::map<std::size_t, PropagationStack> stacks_;
    std::map<std::size_t, ClassifierHead> heads_;
    CriticMap critics_;
};

} // namespace mgh
