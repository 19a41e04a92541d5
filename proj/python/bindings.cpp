#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mgh/cli.hpp"
#include "mgh/evaluation.hpp"
#include "mgh/gradcheck_suite.hpp"
#include "mgh/hypergraph.hpp"
#include "mgh/inspect.hpp"
#include "mgh/training.hpp"

namespace py = pybind11;

namespace {

using Matrix = py::array_t<double, py::array::c_style | py::array::forcecast>;

mgh::Array to_array(const Matrix& m)
{
    if (m.ndim() != 2) throw mgh::ShapeError("expected a 2-d array");
    const auto rows = static_cast<std::size_t>(m.shape(0)), cols = static_cast<std::size_t>(m.shape(1));
    return mgh::Array({rows, cols}, std::vector<double>(m.data(), m.data() + rows * cols));
}

Matrix to_numpy(const mgh::Array& a)
{
    Matrix out({a.rows(), a.cols()});
    std::copy(a.values().begin(), a.values().end(), out.mutable_data());
    return out;
}

std::tuple<int, std::string, std::string> run(const std::vector<std::string>& args)
{
    std::vector<const char*> argv{"mgh"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = mgh::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

py::tuple descriptors(const std::filesystem::path& checkpoint, const std::filesystem::path& corpus_dir)
{
    const mgh::Corpus corpus = mgh::load_corpus(corpus_dir);
    auto model = mgh::load_checkpoint(checkpoint).restore_model();
    std::vector<std::uint32_t> ids;
    for (const auto& seq : corpus.sequences) ids.push_back(seq.tracklet_id);
    return py::make_tuple(ids, to_numpy(model->descriptors(corpus.sequences)));
}

std::vector<py::dict> hyperedges(const Matrix& features, std::size_t parts, std::size_t neighbors,
                                 const std::vector<std::size_t>& thresholds)
{
    mgh::NodeSet nodes;
    nodes.granularity = parts;
    nodes.features = to_array(features);
    if (parts == 0 || nodes.features.rows() % parts != 0)
        throw mgh::PartitionError("node count is not a multiple of the part count");
    nodes.frames = nodes.features.rows() / parts;
    std::vector<py::dict> out;
    for (const mgh::Hyperedge& e : mgh::build_hyperedges(nodes, neighbors, thresholds).edges) {
        py::dict d;
        d["anchor"] = e.anchor;
        d["members"] = e.members;
        d["level"] = e.level;
        out.push_back(d);
    }
    return out;
}

std::string inspect(const std::filesystem::path& checkpoint, const std::filesystem::path& corpus_dir, std::uint32_t tracklet)
{
    const mgh::Corpus corpus = mgh::load_corpus(corpus_dir);
    auto model = mgh::load_checkpoint(checkpoint).restore_model();
    for (const auto& seq : corpus.sequences)
        if (seq.tracklet_id == tracklet) return mgh::inspect_graph_json(*model, seq);
    throw mgh::CorpusError("tracklet " + std::to_string(tracklet) + " is not in the corpus");
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Multi-granular hypergraph sequence encoder";

    auto base = py::register_exception<mgh::Error>(m, "MGHError", PyExc_RuntimeError);
    py::register_exception<mgh::ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<mgh::NumericError>(m, "NumericError", base.ptr());
    py::register_exception<mgh::ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<mgh::CorpusError>(m, "CorpusError", base.ptr());

    m.def("run_cli", &run, py::arg("args"), "Run the command-line interface; returns (exit code, stdout, stderr).");
    m.def("pairwise_cosine_distance",
          [](const Matrix& q, const Matrix& g) { return to_numpy(mgh::pairwise_cosine_distance(to_array(q), to_array(g))); },
          py::arg("queries"), py::arg("gallery"));
    m.def("build_hyperedges", &hyperedges, py::arg("features"), py::arg("parts"), py::arg("neighbors"),
          py::arg("thresholds"), "Hyperedges over frame-major node features of shape [frames * parts, channels].");
    m.def("descriptors", &descriptors, py::arg("checkpoint"), py::arg("corpus"),
          "Tracklet ids and video descriptors for every tracklet in a corpus.");
    m.def("inspect_graph", &inspect, py::arg("checkpoint"), py::arg("corpus"), py::arg("tracklet"));
    m.def(
        "gradcheck",
        [](std::uint64_t seed) {
            std::vector<std::pair<std::string, double>> out;
            for (const auto& e : mgh::run_gradcheck_suite(seed)) out.emplace_back(e.name, e.report.max_rel_error);
            return out;
        },
        py::arg("seed") = 0);
}
