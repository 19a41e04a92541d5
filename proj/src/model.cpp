#include "mgh/model.hpp"

#include <algorithm>
#include <cmath>

namespace mgh {

Array ForwardPass::descriptors() const
{
    if (features.empty()) return Array({0, 0}, 0.0);
    const std::size_t rows = features.begin()->second.value().rows();
    std::size_t width = 0;
    for (const auto& [p, v] : features) width += v.value().cols();
    Array out({rows, width}, 0.0);
    std::size_t col = 0;
    for (const auto& [p, v] : features) {
        const Array& block = v.value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(block.row(r).begin(), block.cols(), out.row(r).begin() + static_cast<std::ptrdiff_t>(col));
        col += block.cols();
    }
    return out;
}

void WeightAudit::merge(const WeightAudit& other)
{
    max_sum_error = std::max(max_sum_error, other.max_sum_error);
    min_weight = std::min(min_weight, other.min_weight);
    weight_sets += other.weight_sets;
}

namespace {

void audit_segments(const Array& weights, std::span<const std::size_t> offsets, WeightAudit& audit)
{
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        if (offsets[s] == offsets[s + 1]) continue;
        double total = 0.0;
        for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) {
            total += weights[k];
            audit.min_weight = std::min(audit.min_weight, weights[k]);
        }
        audit.max_sum_error = std::max(audit.max_sum_error, std::abs(total - 1.0));
        ++audit.weight_sets;
    }
}

} // namespace

WeightAudit audit_weights(const ForwardPass& pass)
{
    WeightAudit audit;
    for (const auto& [p, g] : pass.granularities) {
        std::vector<std::size_t> pair_offsets{0};
        for (const auto& adj : g.topology.incidence) pair_offsets.push_back(pair_offsets.back() + adj.size());
        for (const Array& gamma : g.propagation.gammas) audit_segments(gamma, pair_offsets, audit);
        audit_segments(g.pooled.alpha.value(), g.node_offsets, audit);
    }
    return audit;
}

MGHModel::MGHModel(ModelConfig config, std::size_t dim, std::size_t classes, std::mt19937_64& rng)
    : config_(std::move(config)), dim_(dim), classes_(classes)
{
    config_.validate();
    if (dim_ < 1) throw ConfigError("feature dimension must be positive");
    for (std::size_t p : config_.partitions) stacks_.emplace(p, PropagationStack::initialize(p, dim_, config_.layers, rng));
    for (std::size_t p : config_.partitions) heads_.emplace(p, ClassifierHead::initialize(p, classes_, dim_, rng));
    for (std::size_t a = 0; a < config_.partitions.size(); ++a)
        for (std::size_t b = a + 1; b < config_.partitions.size(); ++b) {
            const std::size_t p = config_.partitions[a], q = config_.partitions[b];
            critics_.emplace(std::make_pair(p, q), MICritic::initialize(p, q, dim_));
        }
}

std::vector<Parameter*> MGHModel::encoder_parameters()
{
    std::vector<Parameter*> out;
    for (auto& [p, stack] : stacks_) {
        for (Parameter* param : stack.parameters()) out.push_back(param);
    }
    for (auto& [p, head] : heads_) {
        out.push_back(&head.weight);
        out.push_back(&head.bias);
    }
    return out;
}

std::vector<Parameter*> MGHModel::critic_parameters()
{
    std::vector<Parameter*> out;
    for (auto& [key, critic] : critics_) out.push_back(&critic.matrix);
    return out;
}

std::vector<Parameter*> MGHModel::parameters()
{
    std::vector<Parameter*> out = encoder_parameters();
    for (Parameter* p : critic_parameters()) out.push_back(p);
    return out;
}

HypergraphTopology MGHModel::build_topology(const NodeSet& nodes) const
{
    if (config_.graph) return build_hyperedges(nodes, config_.neighbors, config_.thresholds);
    HypergraphTopology isolated;
    isolated.granularity = nodes.granularity;
    isolated.node_count = nodes.size();
    isolated.rebuild_incidence();
    return isolated;
}

ForwardPass MGHModel::forward(Tape& tape, std::span<const SequenceFeatures> batch)
{
    if (batch.empty()) throw BatchError("forward pass over an empty batch");
    ForwardPass pass;
    for (std::size_t p : config_.partitions) {
        GranularityPass g;
        std::vector<HypergraphTopology> parts;
        std::vector<NodeSet> node_sets;
        g.node_offsets.push_back(0);
        for (const SequenceFeatures& seq : batch) {
            node_sets.push_back(build_node_set(seq, p));
            if (node_sets.back().features.cols() != dim_) {
                throw ShapeError("tracklet " + std::to_string(seq.tracklet_id) + " has " +
                                 std::to_string(node_sets.back().features.cols()) + " channels, model expects " +
                                 std::to_string(dim_));
            }
            parts.push_back(build_topology(node_sets.back()));
            g.node_offsets.push_back(g.node_offsets.back() + node_sets.back().size());
        }
        g.topology = merge_topologies(parts);

        Array h0({g.node_offsets.back(), dim_}, 0.0);
        for (std::size_t s = 0; s < node_sets.size(); ++s) {
            const auto src = node_sets[s].features.values();
            std::copy(src.begin(), src.end(), h0.values().begin() + static_cast<std::ptrdiff_t>(g.node_offsets[s] * dim_));
        }
        PropagationStack& stack = stacks_.at(p);
        g.propagation = propagate(g.topology, tape.constant(std::move(h0)), stack);
        g.pooled = pool_nodes(g.propagation.output, tape.param(stack.attention), g.node_offsets, config_.attention);
        pass.features.emplace(p, g.pooled.features);
        pass.granularities.emplace(p, std::move(g));
    }
    return pass;
}

Array MGHModel::descriptors(std::span<const SequenceFeatures> sequences, WeightAudit* audit, std::size_t chunk)
{
    const std::size_t width = dim_ * config_.partitions.size();
    Array out({sequences.size(), width}, 0.0);
    for (std::size_t begin = 0; begin < sequences.size(); begin += chunk) {
        const std::size_t count = std::min(chunk, sequences.size() - begin);
        Tape tape;
        const ForwardPass pass = forward(tape, sequences.subspan(begin, count));
        if (audit) audit->merge(audit_weights(pass));
        const Array block = pass.descriptors();
        std::copy(block.values().begin(), block.values().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(begin * width));
    }
    return out;
}

} // namespace mgh
