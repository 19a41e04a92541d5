#include "mgh/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mgh/hypergraph.hpp"

namespace mgh {

ClassifierHead ClassifierHead::initialize(std::size_t granularity, std::size_t classes, std::size_t dim,
                                          std::mt19937_64& rng)
{
    if (classes < 2) throw ConfigError("classifier needs at least two identities, got " + std::to_string(classes));
    const std::string prefix = "cls.p" + std::to_string(granularity);
    ClassifierHead head;
    head.granularity = granularity;
    head.weight = Parameter(prefix + ".weight", xavier_uniform(classes, dim, rng));
    head.bias = Parameter(prefix + ".bias", Array({classes}, 0.0));
    return head;
}

MICritic MICritic::initialize(std::size_t first, std::size_t second, std::size_t dim)
{
    MICritic critic;
    critic.first = first;
    critic.second = second;
    critic.matrix = Parameter("critic.p" + std::to_string(first) + "_p" + std::to_string(second), Array({dim, dim}, 0.0));
    return critic;
}

Var cross_entropy(Var logits, const std::vector<std::size_t>& labels)
{
    const Array& L = logits.value();
    if (L.rank() != 2 || L.rows() != labels.size() || L.rows() == 0) {
        throw ShapeError("cross_entropy: logits " + shape_string(L.shape()) + " for " + std::to_string(labels.size()) +
                         " labels");
    }
    const std::size_t n = L.rows(), classes = L.cols();
    Array probs({n, classes}, 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] >= classes) {
            throw DataError("label " + std::to_string(labels[r]) + " out of range for " + std::to_string(classes) +
                            " classes");
        }
        const auto row = L.row(r);
        const double top = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            probs(r, c) = std::exp(row[c] - top);
            z += probs(r, c);
        }
        for (std::size_t c = 0; c < classes; ++c) probs(r, c) /= z;
        total += top + std::log(z) - row[labels[r]];
    }
    return logits.tape->record("cross_entropy", {logits.id}, Array::scalar(total / static_cast<double>(n)),
                               [li = logits.id, labels, probs = std::move(probs), n](Tape& t, std::size_t self) {
                                   const double g = t.upstream(self)[0] / static_cast<double>(n);
                                   Array& gl = t.grad_ref(li);
                                   for (std::size_t r = 0; r < n; ++r) {
                                       for (std::size_t c = 0; c < probs.cols(); ++c) gl(r, c) += g * probs(r, c);
                                       gl(r, labels[r]) -= g;
                                   }
                               });
}

Var xent_loss(Var features, const std::vector<std::size_t>& labels, ClassifierHead& head)
{
    Tape& tape = *features.tape;
    return cross_entropy(ops::linear(features, tape.param(head.weight), tape.param(head.bias)), labels);
}

namespace {

double l2_distance(std::span<const double> a, std::span<const double> b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

void check_triplet_batch(const std::vector<std::size_t>& labels)
{
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t y : labels) ++counts[y];
    if (counts.size() < 2) throw BatchError("triplet loss needs at least two identities in the batch");
    for (const auto& [label, count] : counts) {
        if (count < 2) throw BatchError("identity " + std::to_string(label) + " has a single sample in the batch");
    }
}

} // namespace

Var batch_hard_triplet(Var features, const std::vector<std::size_t>& labels, const TripletConfig& cfg)
{
    const Array& X = features.value();
    if (X.rank() != 2 || X.rows() != labels.size()) {
        throw ShapeError("batch_hard_triplet: features " + shape_string(X.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
    }
    if (cfg.margin < 0.0) throw ConfigError("triplet margin must be nonnegative");
    check_triplet_batch(labels);

    struct Active {
        std::size_t anchor, positive, negative;
        double dp, dn;
    };
    const std::size_t n = X.rows();
    std::vector<Active> active;
    double total = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        std::size_t pos = n, neg = n;
        double dp = -1.0, dn = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == a) continue;
            const double d = l2_distance(X.row(a), X.row(j));
            if (labels[j] == labels[a]) {
                if (d > dp) {
                    dp = d;
                    pos = j;
                }
            } else if (neg == n || d < dn) {
                dn = d;
                neg = j;
            }
        }
        const double term = cfg.margin + dp - dn;
        if (term > 0.0) {
            total += term;
            active.push_back({a, pos, neg, dp, dn});
        }
    }
    return features.tape->record("batch_hard_triplet", {features.id}, Array::scalar(total / static_cast<double>(n)),
                                 [fi = features.id, active = std::move(active), n](Tape& t, std::size_t self) {
                                     const double g = t.upstream(self)[0] / static_cast<double>(n);
                                     const Array& X = t.value(fi);
                                     Array& gx = t.grad_ref(fi);
                                     const std::size_t d = X.cols();
                                     // d‖x − y‖/dx = (x − y)/‖x − y‖, taken as 0 at coincidence.
                                     auto push = [&](std::size_t a, std::size_t b, double dist, double sign) {
                                         if (dist < 1e-12) return;
                                         const double k = sign * g / dist;
                                         for (std::size_t c = 0; c < d; ++c) {
                                             const double diff = X(a, c) - X(b, c);
                                             gx(a, c) += k * diff;
                                             gx(b, c) -= k * diff;
                                         }
                                     };
                                     for (const Active& act : active) {
                                         push(act.anchor, act.positive, act.dp, 1.0);
                                         push(act.anchor, act.negative, act.dn, -1.0);
                                     }
                                 });
}

std::vector<std::size_t> random_derangement(std::size_t n, std::mt19937_64& rng)
{
    if (n < 2) throw BatchError("a derangement needs at least two elements, got " + std::to_string(n));
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    // Sattolo: every swap partner is strictly below i, giving one n-cycle.
    for (std::size_t i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(perm[i], perm[pick(rng)]);
    }
    return perm;
}

Var mi_estimate(Var first, Var second, Var critic, const std::vector<std::size_t>& derangement)
{
    const std::size_t n = first.value().rows();
    if (n < 2) throw BatchError("mi_estimate needs at least two aligned samples");
    if (second.value().rows() != n || derangement.size() != n) {
        throw ShapeError("mi_estimate: batch sizes disagree");
    }
    const Var joint = ops::bilinear_rows(first, critic, second);
    const Var shuffled = ops::bilinear_rows(first, critic, ops::gather_rows(second, derangement));
    const Var positive = ops::mean(ops::softplus(ops::scale(joint, -1.0)));
    const Var negative = ops::mean(ops::softplus(shuffled));
    return ops::scale(ops::add(positive, negative), -1.0);
}

Var mi_loss(Tape& tape, const std::map<std::size_t, Var>& features, CriticMap& critics,
            const std::vector<std::size_t>& derangement)
{
    Var total = tape.constant(Array::scalar(0.0));
    for (auto a = features.begin(); a != features.end(); ++a) {
        for (auto b = std::next(a); b != features.end(); ++b) {
            const auto it = critics.find({a->first, b->first});
            if (it == critics.end()) {
                throw ConfigError("no critic for granularity pair (" + std::to_string(a->first) + ", " +
                                  std::to_string(b->first) + ")");
            }
            total = ops::add(total, mi_estimate(a->second, b->second, tape.param(it->second.matrix), derangement));
        }
    }
    return total;
}

Var total_loss(Tape& tape, const LossTerms& terms, const LossToggles& toggles)
{
    Var total = tape.constant(Array::scalar(0.0));
    if (toggles.xent) total = ops::add(total, terms.xent);
    if (toggles.triplet) total = ops::add(total, terms.triplet);
    if (toggles.mutual_info) total = ops::add(total, terms.mutual_info);
    return total;
}

double total_loss(double xent, double triplet, double mutual_info, const LossToggles& toggles)
{
    double total = 0.0;
    if (toggles.xent) total += xent;
    if (toggles.triplet) total += triplet;
    if (toggles.mutual_info) total += mutual_info;
    return total;
}

} // namespace mgh
