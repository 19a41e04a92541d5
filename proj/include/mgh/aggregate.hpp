#pragma once

#include <map>
#include <vector>

#include "mgh/diffcore.hpp"

namespace mgh {

struct GraphFeature {
    std::size_t granularity = 1;
    Array feature; // h_p, [d]
    Array alpha;   // [N_p], sums to 1
};

/// alpha = softmax(O · W_uᵀ) over the N_p nodes.
Var node_attention(Var outputs, Var attention_weight);

/// Σ_i alpha_i · O_i.
Var graph_feature(Var outputs, Var alpha);

/// Concatenates h_p for each granularity in `order` (ascending p by
/// convention). Throws ConfigError for a missing granularity.
Array video_descriptor(const std::map<std::size_t, GraphFeature>& features, const std::vector<std::size_t>& order);

/// Node pooling over many sequences at once. Sequence s owns node rows
/// [offsets[s], offsets[s+1]).
struct PooledFeatures {
    Var features; // [S × d]
    Var alpha;    // [N]
};

/// Attention pooling per sequence, or the plain per-sequence mean when
/// `use_attention` is false (the frame-average baseline).
PooledFeatures pool_nodes(Var outputs, Var attention_weight, const std::vector<std::size_t>& offsets,
                          bool use_attention);

/// Row-wise concatenation of per-granularity [S × d] blocks.
Var concat_features(const std::vector<Var>& blocks);

} // namespace mgh
