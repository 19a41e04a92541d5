#include "mgh/hypergraph.hpp"

#include <algorithm>
#include <cmath>

namespace mgh {

void HypergraphTopology::rebuild_incidence()
{
    incidence.assign(node_count, {});
    for (std::size_t e = 0; e < edges.size(); ++e) {
        for (std::size_t m : edges[e].members) {
            if (m >= node_count) throw TopologyError("edge " + std::to_string(e) + " references node " + std::to_string(m));
            incidence[m].push_back(e);
        }
    }
}

HypergraphTopology build_hyperedges(const NodeSet& nodes, std::size_t k, const std::vector<std::size_t>& thresholds)
{
    if (k < 1) throw ConfigError("hyperedge neighbor count K must be at least 1");
    if (thresholds.empty()) throw ConfigError("at least one temporal threshold is required");
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        if (thresholds[t] == 0 || (t > 0 && thresholds[t] <= thresholds[t - 1])) {
            throw ConfigError("temporal thresholds must be strictly increasing positive integers");
        }
    }

    const std::size_t n = nodes.size();
    if (nodes.features.rank() != 2 || nodes.features.rows() != n) {
        throw ShapeError("node set features " + shape_string(nodes.features.shape()) + " do not match " +
                         std::to_string(n) + " nodes");
    }
    std::vector<double> affinity(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = cosine_similarity(nodes.features.row(i), nodes.features.row(j));
            affinity[i * n + j] = c;
            affinity[j * n + i] = c;
        }

    HypergraphTopology topo;
    topo.granularity = nodes.granularity;
    topo.node_count = n;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ti = nodes.frame_of(i);
        const auto better = [&](std::size_t a, std::size_t b) {
            const double fa = affinity[i * n + a], fb = affinity[i * n + b];
            return fa != fb ? fa > fb : a < b;
        };
        for (std::size_t level = 0; level < thresholds.size(); ++level) {
            candidates.clear();
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const std::size_t tj = nodes.frame_of(j);
                const std::size_t gap = ti > tj ? ti - tj : tj - ti;
                if (gap <= thresholds[level]) candidates.push_back(j);
            }
            if (candidates.empty()) continue;
            const std::size_t take = std::min(k, candidates.size());
            std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                              candidates.end(), better);
            Hyperedge edge;
            edge.anchor = i;
            edge.level = level + 1;
            edge.members.reserve(take + 1);
            edge.members.push_back(i);
            edge.members.insert(edge.members.end(), candidates.begin(),
                                candidates.begin() + static_cast<std::ptrdiff_t>(take));
            topo.edges.push_back(std::move(edge));
        }
    }
    topo.rebuild_incidence();
    return topo;
}

HypergraphTopology merge_topologies(std::span<const HypergraphTopology> parts)
{
    HypergraphTopology merged;
    if (!parts.empty()) merged.granularity = parts.front().granularity;
    std::size_t offset = 0;
    for (const HypergraphTopology& part : parts) {
        for (const Hyperedge& e : part.edges) {
            Hyperedge shifted = e;
            shifted.anchor += offset;
            for (std::size_t& m : shifted.members) m += offset;
            merged.edges.push_back(std::move(shifted));
        }
        offset += part.node_count;
    }
    merged.node_count = offset;
    merged.rebuild_incidence();
    return merged;
}

Array xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng)
{
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Array out({rows, cols}, 0.0);
    for (double& v : out.values()) v = dist(rng);
    return out;
}

PropagationStack PropagationStack::initialize(std::size_t granularity, std::size_t dim, std::size_t num_layers,
                                              std::mt19937_64& rng)
{
    if (num_layers < 1) throw ConfigError("propagation needs at least one layer");
    PropagationStack stack;
    stack.granularity = granularity;
    const std::string prefix = "hg.p" + std::to_string(granularity);
    for (std::size_t l = 1; l <= num_layers; ++l) {
        const std::string name = prefix + ".layer" + std::to_string(l);
        stack.layers.push_back({Parameter(name + ".weight", xavier_uniform(dim, 2 * dim, rng)),
                                Parameter(name + ".bias", Array({dim}, 0.0))});
    }
    stack.attention = Parameter(prefix + ".attention", xavier_uniform(1, dim, rng));
    return stack;
}

std::vector<Parameter*> PropagationStack::parameters()
{
    std::vector<Parameter*> out;
    for (PropagationLayer& layer : layers) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    out.push_back(&attention);
    return out;
}

Var hyperedge_message(Var states, const Hyperedge& edge, std::size_t node)
{
    if (std::find(edge.members.begin(), edge.members.end(), node) == edge.members.end()) {
        throw TopologyError("node " + std::to_string(node) + " is not a member of the edge anchored at " +
                            std::to_string(edge.anchor));
    }
    std::vector<std::size_t> others;
    for (std::size_t m : edge.members)
        if (m != node) others.push_back(m);
    if (others.empty()) throw TopologyError("hyperedge anchored at " + std::to_string(edge.anchor) + " has one member");
    return ops::mean_rows(ops::gather_rows(states, std::move(others)));
}

Var aggregate_messages(Var states, const HypergraphTopology& topology, std::size_t node, Array* gamma)
{
    const std::size_t d = states.value().cols();
    const auto& adj = topology.incidence.at(node);
    if (adj.empty()) {
        if (gamma) *gamma = Array({0}, 0.0);
        return states.tape->constant(Array({d}, 0.0));
    }
    const Var h = ops::reshape(ops::gather_rows(states, {node}), {d});
    std::vector<Var> messages;
    std::vector<Var> scores;
    for (std::size_t e : adj) {
        messages.push_back(hyperedge_message(states, topology.edges[e], node));
        scores.push_back(ops::cosine(h, messages.back()));
    }
    Var z = scores.front();
    Var stacked = messages.front();
    for (std::size_t k = 1; k < adj.size(); ++k) {
        z = ops::concat(z, scores[k]);
        stacked = ops::concat(stacked, messages[k]);
    }
    const Var weights = ops::softmax(z);
    if (gamma) *gamma = weights.value();
    const std::size_t count = adj.size();
    const Var blended = ops::matmul(ops::reshape(weights, {1, count}), ops::reshape(stacked, {count, d}));
    return ops::reshape(blended, {d});
}

Var update_node(Var h_prev, Var message, Var weight, Var bias)
{
    const Var joined = ops::concat(h_prev, message);
    const std::size_t width = joined.value().size();
    const Var pre = ops::reshape(ops::matmul(weight, ops::reshape(joined, {width, 1})), {weight.value().rows()});
    return ops::relu(ops::add(pre, bias));
}

namespace {

/// Flattened (node, incident edge) pairs shared by every round.
struct MessagePlan {
    std::vector<std::size_t> pair_node;
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> offsets;
};

MessagePlan make_plan(const HypergraphTopology& topology)
{
    MessagePlan plan;
    plan.offsets.push_back(0);
    for (std::size_t i = 0; i < topology.node_count; ++i) {
        for (std::size_t e : topology.incidence[i]) {
            const Hyperedge& edge = topology.edges[e];
            std::vector<std::size_t> others;
            others.reserve(edge.members.size());
            for (std::size_t m : edge.members)
                if (m != i) others.push_back(m);
            if (others.empty()) throw TopologyError("hyperedge anchored at " + std::to_string(edge.anchor) + " has one member");
            plan.pair_node.push_back(i);
            plan.groups.push_back(std::move(others));
        }
        plan.offsets.push_back(plan.pair_node.size());
    }
    return plan;
}

} // namespace

PropagationResult propagate(const HypergraphTopology& topology, Var h0, PropagationStack& stack)
{
    if (stack.granularity != topology.granularity) {
        throw ConfigError("propagation stack for p=" + std::to_string(stack.granularity) + " applied to topology p=" +
                          std::to_string(topology.granularity));
    }
    if (topology.incidence.size() != topology.node_count) throw TopologyError("topology incidence is stale");
    const Array& H0 = h0.value();
    if (H0.rank() != 2 || H0.rows() != topology.node_count) {
        throw ShapeError("node states " + shape_string(H0.shape()) + " do not match " +
                         std::to_string(topology.node_count) + " nodes");
    }
    const MessagePlan plan = make_plan(topology);
    Tape& tape = *h0.tape;

    PropagationResult result;
    Var states = h0;
    for (PropagationLayer& layer : stack.layers) {
        const Var messages = ops::group_mean(states, plan.groups);
        const Var own = ops::gather_rows(states, plan.pair_node);
        const Var scores = ops::row_cosine(own, messages);
        const Var gamma = ops::segment_softmax(scores, plan.offsets);
        result.gammas.push_back(gamma.value());
        const Var blended = ops::segment_weighted_sum(gamma, messages, plan.offsets);
        const Var joined = ops::concat_cols(states, blended);
        states = ops::relu(ops::linear(joined, tape.param(layer.weight), tape.param(layer.bias)));
    }
    result.output = states;
    return result;
}

} // namespace mgh
