#include "mgh/aggregate.hpp"

namespace mgh {

Var node_attention(Var outputs, Var attention_weight)
{
    const std::size_t n = outputs.value().rows();
    if (n == 0) throw ShapeError("node_attention: no nodes");
    const Var scores = ops::linear(outputs, attention_weight);
    return ops::softmax(ops::reshape(scores, {n}));
}

Var graph_feature(Var outputs, Var alpha)
{
    const std::size_t n = outputs.value().rows();
    if (alpha.value().rank() != 1 || alpha.value().size() != n) {
        throw ShapeError("graph_feature: attention " + shape_string(alpha.value().shape()) + " for " + std::to_string(n) +
                         " nodes");
    }
    const Var pooled = ops::matmul(ops::reshape(alpha, {1, n}), outputs);
    return ops::reshape(pooled, {outputs.value().cols()});
}

Array video_descriptor(const std::map<std::size_t, GraphFeature>& features, const std::vector<std::size_t>& order)
{
    std::vector<double> joined;
    for (std::size_t p : order) {
        const auto it = features.find(p);
        if (it == features.end()) throw ConfigError("video descriptor: granularity " + std::to_string(p) + " missing");
        const auto values = it->second.feature.values();
        joined.insert(joined.end(), values.begin(), values.end());
    }
    return Array::vector(std::move(joined));
}

PooledFeatures pool_nodes(Var outputs, Var attention_weight, const std::vector<std::size_t>& offsets, bool use_attention)
{
    const std::size_t n = outputs.value().rows();
    PooledFeatures pooled;
    if (use_attention) {
        const Var scores = ops::reshape(ops::linear(outputs, attention_weight), {n});
        pooled.alpha = ops::segment_softmax(scores, offsets);
    } else {
        Array uniform({n}, 0.0);
        for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
            const std::size_t count = offsets[s + 1] - offsets[s];
            for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) uniform[k] = 1.0 / static_cast<double>(count);
        }
        pooled.alpha = outputs.tape->constant(std::move(uniform));
    }
    pooled.features = ops::segment_weighted_sum(pooled.alpha, outputs, offsets);
    return pooled;
}

Var concat_features(const std::vector<Var>& blocks)
{
    if (blocks.empty()) throw ConfigError("no granularities to concatenate");
    Var joined = blocks.front();
    for (std::size_t i = 1; i < blocks.size(); ++i) joined = ops::concat_cols(joined, blocks[i]);
    return joined;
}

} // namespace mgh
