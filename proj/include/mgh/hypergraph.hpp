#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mgh/diffcore.hpp"
#include "mgh/featstage.hpp"

namespace mgh {

/// An anchor node joined with its selected neighbors. `members` lists the
/// anchor first, then neighbors by descending affinity. `level` is the
/// 1-based index of the temporal threshold the edge was built under.
struct Hyperedge {
    std::size_t anchor = 0;
    std::vector<std::size_t> members;
    std::size_t level = 1;

    bool operator==(const Hyperedge&) const = default;
};

struct HypergraphTopology {
    std::size_t granularity = 1;
    std::size_t node_count = 0;
    std::vector<Hyperedge> edges;
    /// incidence[i] lists, in ascending order, every edge index whose
    /// members include node i.
    std::vector<std::vector<std::size_t>> incidence;

    void rebuild_incidence();
};

/// For every node and every threshold T_t, joins the node with its top-K
/// cosine neighbors among nodes whose frame distance is at most T_t. Ties go
/// to the lower node index. Fewer than K candidates yields a smaller edge;
/// no candidates yields no edge.
HypergraphTopology build_hyperedges(const NodeSet& nodes, std::size_t k, const std::vector<std::size_t>& thresholds);

/// Disjoint union; node indices of part g are shifted by the node counts of
/// parts 0..g-1.
HypergraphTopology merge_topologies(std::span<const HypergraphTopology> parts);

struct PropagationLayer {
    Parameter weight; // [d × 2d]
    Parameter bias;   // [d]
};

/// Learned state for one granularity: L update layers plus the node
/// attention row W_u.
struct PropagationStack {
    std::size_t granularity = 1;
    std::vector<PropagationLayer> layers;
    Parameter attention; // [1 × d]

    static PropagationStack initialize(std::size_t granularity, std::size_t dim, std::size_t num_layers,
                                       std::mt19937_64& rng);
    std::vector<Parameter*> parameters();
};

/// Scaled-uniform init, bound sqrt(6 / (fan_in + fan_out)).
Array xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

/// Mean of the states of every member of `edge` other than `node`.
Var hyperedge_message(Var states, const Hyperedge& edge, std::size_t node);

/// Cosine-scored softmax blend of the messages of every edge incident on
/// `node`; zero vector for isolated nodes. Writes the blend weights to
/// `gamma` when given.
Var aggregate_messages(Var states, const HypergraphTopology& topology, std::size_t node, Array* gamma = nullptr);

/// relu(W · [h_prev, message] + bias).
Var update_node(Var h_prev, Var message, Var weight, Var bias);

struct PropagationResult {
    Var output; // [N × d]
    /// gammas[l][k] is the weight of the k-th (node, incident edge) pair in
    /// round l, pairs ordered by node then by incidence order.
    std::vector<Array> gammas;
};

/// L synchronous rounds of message passing over a frozen topology.
PropagationResult propagate(const HypergraphTopology& topology, Var h0, PropagationStack& stack);

} // namespace mgh
