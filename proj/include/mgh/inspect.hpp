#pragma once

#include <string>

#include "mgh/model.hpp"

namespace mgh {

/// Topology and attention dump for one tracklet: per granularity, the node
/// list, every hyperedge with the last layer's blend weights of its members,
/// and the node attention weights α.
std::string inspect_graph_json(MGHModel& model, const SequenceFeatures& sequence);

} // namespace mgh
