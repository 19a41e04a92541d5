#include "mgh/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "mgh/losses.hpp"
#include "mgh/model.hpp"

namespace mgh {

namespace {

Array uniform(Shape shape, std::mt19937_64& rng)
{
    Array a(std::move(shape), 0.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : a.values()) v = u(rng);
    return a;
}

// Keeps relu and hinge inputs clear of their kinks so central differences
// never straddle one.
Array uniform_away_from_zero(Shape shape, std::mt19937_64& rng)
{
    Array a = uniform(std::move(shape), rng);
    for (double& v : a.values())
        if (std::abs(v) < 0.05) v += v < 0 ? -0.05 : 0.05;
    return a;
}

Var project(Tape& tape, Var v, const Array& weights)
{
    const std::size_t n = v.value().size();
    return ops::sum(ops::matmul(ops::reshape(v, {1, n}), tape.constant(weights.reshaped({n, 1}))));
}

struct Case {
    std::string name;
    std::vector<Parameter> inputs;
    std::function<Var(Tape&, std::vector<Var>&)> body;
};

GradCheckEntry run_case(Case& c, std::mt19937_64& rng, double step)
{
    // Output size is only known after one evaluation.
    std::size_t out_size = 0;
    {
        Tape tape;
        std::vector<Var> vars;
        for (Parameter& p : c.inputs) vars.push_back(tape.param(p));
        out_size = c.body(tape, vars).value().size();
    }
    const Array weights = uniform({out_size}, rng);
    std::vector<Parameter*> params;
    for (Parameter& p : c.inputs) params.push_back(&p);
    auto f = [&](Tape& tape) {
        std::vector<Var> vars;
        for (Parameter& p : c.inputs) vars.push_back(tape.param(p));
        return project(tape, c.body(tape, vars), weights);
    };
    return {c.name, gradient_check(f, params, step)};
}

} // namespace

std::vector<GradCheckEntry> check_primitives(std::uint64_t seed, double step)
{
    std::mt19937_64 rng(seed);
    auto P = [&](const char* name, Shape shape) { return Parameter(name, uniform(std::move(shape), rng)); };
    auto Pk = [&](const char* name, Shape shape) { return Parameter(name, uniform_away_from_zero(std::move(shape), rng)); };

    std::vector<Case> cases;
    cases.push_back({"matmul", {P("a", {3, 4}), P("b", {4, 2})}, [](Tape&, auto& v) { return ops::matmul(v[0], v[1]); }});
    cases.push_back({"linear", {P("x", {3, 4}), P("w", {2, 4}), P("b", {2})},
                     [](Tape&, auto& v) { return ops::linear(v[0], v[1], v[2]); }});
    cases.push_back({"linear_nobias", {P("x", {3, 4}), P("w", {2, 4})}, [](Tape&, auto& v) { return ops::linear(v[0], v[1]); }});
    cases.push_back({"reshape", {P("x", {2, 3})}, [](Tape&, auto& v) { return ops::reshape(v[0], {3, 2}); }});
    cases.push_back({"softmax", {P("x", {5})}, [](Tape&, auto& v) { return ops::softmax(v[0]); }});
    cases.push_back({"cosine", {P("a", {4}), P("b", {4})}, [](Tape&, auto& v) { return ops::cosine(v[0], v[1]); }});
    cases.push_back({"mean_rows", {P("x", {3, 4})}, [](Tape&, auto& v) { return ops::mean_rows(v[0]); }});
    cases.push_back({"concat", {P("a", {2}), P("b", {3})}, [](Tape&, auto& v) { return ops::concat(v[0], v[1]); }});
    cases.push_back({"relu", {Pk("x", {6})}, [](Tape&, auto& v) { return ops::relu(v[0]); }});
    cases.push_back({"add", {P("a", {2, 3}), P("b", {2, 3})}, [](Tape&, auto& v) { return ops::add(v[0], v[1]); }});
    cases.push_back({"sub", {P("a", {2, 3}), P("b", {2, 3})}, [](Tape&, auto& v) { return ops::sub(v[0], v[1]); }});
    cases.push_back({"scale", {P("x", {4})}, [](Tape&, auto& v) { return ops::scale(v[0], 0.7); }});
    cases.push_back({"sum", {P("x", {2, 3})}, [](Tape&, auto& v) { return ops::sum(v[0]); }});
    cases.push_back({"mean", {P("x", {2, 3})}, [](Tape&, auto& v) { return ops::mean(v[0]); }});
    cases.push_back({"softplus", {P("x", {5})}, [](Tape&, auto& v) { return ops::softplus(v[0]); }});
    cases.push_back({"gather_rows", {P("x", {4, 3})}, [](Tape&, auto& v) { return ops::gather_rows(v[0], {2, 0, 2}); }});
    cases.push_back({"group_mean", {P("x", {5, 3})},
                     [](Tape&, auto& v) { return ops::group_mean(v[0], {{0, 1}, {2}, {1, 3, 4}}); }});
    cases.push_back({"row_cosine", {P("a", {3, 4}), P("b", {3, 4})}, [](Tape&, auto& v) { return ops::row_cosine(v[0], v[1]); }});
    cases.push_back({"segment_softmax", {P("z", {6})}, [](Tape&, auto& v) { return ops::segment_softmax(v[0], {0, 2, 6}); }});
    cases.push_back({"segment_weighted_sum", {P("w", {5}), P("x", {5, 3})},
                     [](Tape&, auto& v) { return ops::segment_weighted_sum(v[0], v[1], {0, 2, 2, 5}); }});
    cases.push_back({"concat_cols", {P("a", {3, 2}), P("b", {3, 3})}, [](Tape&, auto& v) { return ops::concat_cols(v[0], v[1]); }});
    cases.push_back({"bilinear_rows", {P("x", {3, 4}), P("m", {4, 2}), P("y", {3, 2})},
                     [](Tape&, auto& v) { return ops::bilinear_rows(v[0], v[1], v[2]); }});
    cases.push_back({"cross_entropy", {P("logits", {4, 3})},
                     [](Tape&, auto& v) { return cross_entropy(v[0], {0, 2, 1, 2}); }});
    cases.push_back({"batch_hard_triplet", {P("h", {4, 3})},
                     [](Tape&, auto& v) { return batch_hard_triplet(v[0], {0, 0, 1, 1}, TripletConfig{0.3}); }});
    cases.push_back({"mi_estimate", {P("x", {4, 3}), P("m", {3, 3}), P("y", {4, 3})},
                     [](Tape&, auto& v) { return mi_estimate(v[0], v[2], v[1], {1, 2, 3, 0}); }});

    std::vector<GradCheckEntry> out;
    for (Case& c : cases) out.push_back(run_case(c, rng, step));
    return out;
}

GradCheckEntry check_joint_loss(std::uint64_t seed, const MicroModelSpec& spec, double step)
{
    std::mt19937_64 rng(seed);
    ModelConfig cfg;
    cfg.partitions = spec.partitions;
    cfg.thresholds = spec.thresholds;
    cfg.neighbors = spec.neighbors;
    cfg.layers = spec.layers;
    MGHModel model(cfg, spec.channels, spec.identities, rng);
    for (Parameter* p : model.critic_parameters()) p->value = uniform(p->value.shape(), rng);

    std::vector<SequenceFeatures> batch;
    std::vector<std::size_t> labels;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t id = 0; id < spec.identities; ++id) {
        for (std::size_t k = 0; k < spec.per_identity; ++k) {
            SequenceFeatures seq;
            seq.tracklet_id = static_cast<std::uint32_t>(batch.size());
            seq.camera_id = static_cast<std::uint32_t>(k);
            for (std::size_t t = 0; t < spec.frames; ++t) {
                Array frame({spec.channels, spec.height, spec.width}, 0.0);
                for (double& v : frame.values()) v = noise(rng) + 0.5;
                seq.frames.push_back(FrameFeatureMap(std::move(frame)));
            }
            batch.push_back(std::move(seq));
            labels.push_back(id);
        }
    }
    const std::vector<std::size_t> derangement = random_derangement(batch.size(), rng);

    auto f = [&](Tape& tape) {
        const ForwardPass pass = model.forward(tape, batch);
        Var xent = tape.constant(Array::scalar(0.0));
        Var tri = xent;
        for (const auto& [p, h] : pass.features) {
            xent = ops::add(xent, xent_loss(h, labels, model.head(p)));
            tri = ops::add(tri, batch_hard_triplet(h, labels, TripletConfig{}));
        }
        const Var mi = mi_loss(tape, pass.features, model.critics(), derangement);
        return total_loss(tape, LossTerms{xent, tri, mi}, LossToggles{});
    };
    const auto params = model.parameters();
    return {"joint_loss", gradient_check(f, params, step)};
}

std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed, double step)
{
    auto out = check_primitives(seed, step);
    out.push_back(check_joint_loss(seed, MicroModelSpec{}, step));
    return out;
}

} // namespace mgh
