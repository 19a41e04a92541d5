#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgh/diffcore.hpp"

namespace mgh {

struct GradCheckEntry {
    std::string name;
    GradCheckReport report;
};

/// Finite-difference checks of every differentiable primitive on random
/// inputs in [−1, 1], each reduced to a scalar by a fixed random projection.
std::vector<GradCheckEntry> check_primitives(std::uint64_t seed, double step = 1e-5);

/// Micro-model settings for the end-to-end check of the joint loss.
struct MicroModelSpec {
    std::size_t identities = 2;
    std::size_t per_identity = 2;
    std::size_t frames = 4;
    std::size_t channels = 8;
    std::size_t height = 4;
    std::size_t width = 2;
    std::vector<std::size_t> partitions{1, 2};
    std::vector<std::size_t> thresholds{1, 3};
    std::size_t neighbors = 3;
    std::size_t layers = 2;
};

/// Checks the gradient of xent + triplet + MI with respect to every model
/// parameter (critics included, randomized away from their zero init).
GradCheckEntry check_joint_loss(std::uint64_t seed, const MicroModelSpec& spec = {}, double step = 1e-5);

/// check_primitives followed by check_joint_loss.
std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed, double step = 1e-5);

} // namespace mgh
