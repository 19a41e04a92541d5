#include "mgh/inspect.hpp"

#include <algorithm>

#include "json.hpp"

namespace mgh {

using nlohmann::ordered_json;

std::string inspect_graph_json(MGHModel& model, const SequenceFeatures& sequence)
{
    sequence.validate();
    Tape tape;
    const ForwardPass pass = model.forward(tape, std::span<const SequenceFeatures>(&sequence, 1));

    ordered_json doc;
    doc["tracklet_id"] = sequence.tracklet_id;
    doc["camera_id"] = sequence.camera_id;
    ordered_json graphs = ordered_json::array();
    for (const auto& [p, g] : pass.granularities) {
        const HypergraphTopology& topo = g.topology;
        ordered_json entry;
        entry["granularity"] = p;

        ordered_json nodes = ordered_json::array();
        for (std::size_t i = 0; i < topo.node_count; ++i)
            nodes.push_back({{"id", i}, {"frame", i / p}, {"part", i % p}});
        entry["nodes"] = nodes;

        // gamma of the pair (node i, k-th incident edge) sits at pair_offset[i] + k.
        std::vector<std::size_t> pair_offset{0};
        for (const auto& adj : topo.incidence) pair_offset.push_back(pair_offset.back() + adj.size());
        const Array* last = g.propagation.gammas.empty() ? nullptr : &g.propagation.gammas.back();

        ordered_json edges = ordered_json::array();
        for (std::size_t e = 0; e < topo.edges.size(); ++e) {
            const Hyperedge& edge = topo.edges[e];
            ordered_json weights = ordered_json::array();
            for (std::size_t member : edge.members) {
                const auto& adj = topo.incidence[member];
                const auto pos = static_cast<std::size_t>(std::find(adj.begin(), adj.end(), e) - adj.begin());
                weights.push_back(last ? (*last)[pair_offset[member] + pos] : 0.0);
            }
            edges.push_back({{"anchor", edge.anchor}, {"members", edge.members}, {"level", edge.level},
                             {"gamma_weights_last_layer", weights}});
        }
        entry["edges"] = edges;
        entry["alpha"] = g.pooled.alpha.value().storage();
        graphs.push_back(std::move(entry));
    }
    doc["granularities"] = graphs;
    return doc.dump(2);
}

} // namespace mgh
