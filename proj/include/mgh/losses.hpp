#pragma once

#include <map>
#include <random>
#include <utility>
#include <vector>

#include "mgh/diffcore.hpp"

namespace mgh {

struct ClassifierHead {
    std::size_t granularity = 1;
    Parameter weight; // [classes × d]
    Parameter bias;   // [classes]

    static ClassifierHead initialize(std::size_t granularity, std::size_t classes, std::size_t dim, std::mt19937_64& rng);
};

struct TripletConfig {
    double margin = 0.3;
};

/// Bilinear critic s(x, y) = xᵀ M y for one unordered granularity pair.
struct MICritic {
    std::size_t first = 1;
    std::size_t second = 2;
    Parameter matrix; // [d × d]

    static MICritic initialize(std::size_t first, std::size_t second, std::size_t dim);
};

using CriticMap = std::map<std::pair<std::size_t, std::size_t>, MICritic>;

struct LossToggles {
    bool xent = true;
    bool triplet = true;
    bool mutual_info = true;
};

/// Batch mean of −log softmax(logits)[label].
Var cross_entropy(Var logits, const std::vector<std::size_t>& labels);

/// Cross entropy of a linear classifier over one granularity's features.
Var xent_loss(Var features, const std::vector<std::size_t>& labels, ClassifierHead& head);

/// (1/N) Σ_a [m + max_pos ‖h_a − h_pos‖ − min_neg ‖h_a − h_neg‖]₊. Every
/// label needs at least two samples and at least two labels must be present.
Var batch_hard_triplet(Var features, const std::vector<std::size_t>& labels, const TripletConfig& cfg);

/// A random permutation with no fixed points (a single n-cycle). n ≥ 2.
std::vector<std::size_t> random_derangement(std::size_t n, std::mt19937_64& rng);

/// Jensen-Shannon MI lower bound: mean over aligned pairs of −softplus(−s)
/// minus mean over shuffled pairs (x_i, y_{π(i)}) of softplus(s).
Var mi_estimate(Var first, Var second, Var critic, const std::vector<std::size_t>& derangement);

/// Σ over unordered granularity pairs of mi_estimate. Zero when fewer than
/// two granularities are present.
Var mi_loss(Tape& tape, const std::map<std::size_t, Var>& features, CriticMap& critics,
            const std::vector<std::size_t>& derangement);

struct LossTerms {
    Var xent;
    Var triplet;
    Var mutual_info;
};

/// Unweighted sum of the enabled terms; zero when all are disabled.
Var total_loss(Tape& tape, const LossTerms& terms, const LossToggles& toggles);
double total_loss(double xent, double triplet, double mutual_info, const LossToggles& toggles);

} // namespace mgh
