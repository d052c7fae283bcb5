// Thin numpy-facing wrappers over the C++ library. Arrays come back as
// float64 (images, probabilities) or uint8 (masks); configs travel as the
// same YAML the command-line tool reads.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "skipgraph/app.hpp"
#include "skipgraph/metrics.hpp"

namespace py = pybind11;
using namespace skipgraph;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const F64& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }
std::span<const std::uint8_t> view(const U8& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

void same_size(const py::array& a, const py::array& b) {
    if (a.size() != b.size()) throw DimensionError("arrays have different sizes");
}

py::tuple sample_arrays(const Sample& s) {
    F64 img({std::size_t{3}, s.height, s.width});
    std::copy(s.image.begin(), s.image.end(), img.mutable_data());
    U8 mask({s.height, s.width});
    std::copy(s.mask.begin(), s.mask.end(), mask.mutable_data());
    return py::make_tuple(img, mask);
}

py::dict summary_dict(const MetricSummary& m) {
    py::dict d;
    d["images"] = m.images;
    d["dsc"] = m.dsc;
    d["miou"] = m.miou;
    d["mae"] = m.mae;
    d["hd95"] = m.hd95;
    d["hd95_missing"] = m.hd95_missing;
    return d;
}

SynthSpec make_spec(std::size_t count, std::size_t size, std::uint64_t seed, const std::string& family,
                    double noise, double contrast, double scale, std::uint64_t stream) {
    SynthSpec s;
    s.count = count;
    s.height = s.width = size;
    s.seed = seed;
    s.family = shape_family_from_string(family);
    s.noise_sigma = noise;
    s.contrast = contrast;
    s.scale = scale;
    s.stream = stream;
    return s;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Graph skip-connection segmentation: data, model pieces, training and metrics";
    m.attr("__version__") = kToolVersion;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<GraphError>(m, "GraphError", PyExc_ValueError);
    py::register_exception<ManifestError>(m, "ManifestError", PyExc_IOError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    // data
    m.def(
        "generate",
        [](std::size_t count, std::size_t size, std::uint64_t seed, const std::string& family, double noise,
           double contrast, double scale, std::uint64_t stream) {
            const auto samples = generate(make_spec(count, size, seed, family, noise, contrast, scale, stream));
            py::list out;
            for (const auto& s : samples) out.append(sample_arrays(s));
            return out;
        },
        py::arg("count"), py::arg("size") = 64, py::arg("seed") = 1, py::arg("family") = "mixed",
        py::arg("noise") = 0.05, py::arg("contrast") = 1.0, py::arg("scale") = 1.0, py::arg("stream") = 0,
        "List of (image [3, H, W] float64, mask [H, W] uint8) pairs.");
    m.def(
        "gen_data",
        [](const std::filesystem::path& output, std::size_t count, std::size_t val_count, std::size_t test_count,
           std::size_t size, std::uint64_t seed) {
            GenDataOptions o;
            o.output = output;
            o.spec.count = count;
            o.spec.height = o.spec.width = size;
            o.spec.seed = seed;
            o.val_count = val_count;
            o.test_count = test_count;
            run_gen_data(o);
        },
        py::arg("output"), py::arg("count") = 200, py::arg("val_count") = 50, py::arg("test_count") = 100,
        py::arg("size") = 64, py::arg("seed") = 1);
    m.def(
        "read_corpus",
        [](const std::filesystem::path& dir) {
            py::list out;
            for (const auto& s : read_corpus(dir)) out.append(sample_arrays(s));
            return out;
        },
        py::arg("dir"));

    // graph and entropy pieces
    m.def(
        "build_dilated_knn",
        [](const F64& features, std::size_t k, std::size_t dilation) {
            if (features.ndim() != 2) throw DimensionError("features must be [C, N]");
            const std::size_t C = features.shape(0), N = features.shape(1);
            const PatchGraph g = build_dilated_knn(view(features), C, N, k, dilation);
            py::array_t<std::int32_t> out({N, k});
            std::copy(g.neighbors.begin(), g.neighbors.end(), out.mutable_data());
            return out;
        },
        py::arg("features"), py::arg("k"), py::arg("dilation") = 1, "Neighbor table [N, K] of a [C, N] matrix.");
    m.def(
        "channel_entropy",
        [](const F64& f) {
            if (f.ndim() < 2) throw DimensionError("expected [C, ...] features");
            Shape shape{1};
            for (py::ssize_t d = 0; d < f.ndim(); ++d) shape.push_back(static_cast<std::size_t>(f.shape(d)));
            const auto e = channel_entropy(Tensor<double>(shape, std::vector<double>(f.data(), f.data() + f.size())));
            return e[0].scores;
        },
        py::arg("features"), "Mean binary entropy of sigmoid(f) per channel of a [C, ...] array.");
    m.def(
        "bottom_m_select", [](const std::vector<double>& scores, std::size_t M) { return bottom_m_select(scores, M); },
        py::arg("scores"), py::arg("m"));

    // metrics
    m.def(
        "dsc",
        [](const U8& a, const U8& b) {
            same_size(a, b);
            return dsc(view(a), view(b));
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "miou",
        [](const U8& a, const U8& b) {
            same_size(a, b);
            return miou(view(a), view(b));
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "mae",
        [](const F64& a, const F64& b) {
            same_size(a, b);
            return mae(view(a), view(b));
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "hd95",
        [](const U8& a, const U8& b) {
            same_size(a, b);
            if (a.ndim() != 2) throw DimensionError("hd95 needs 2-D masks");
            return hd95(view(a), view(b), a.shape(0), a.shape(1));
        },
        py::arg("pred"), py::arg("truth"));

    // configs and runs
    m.def("default_config", [] { return dump_run_config(RunConfig{}); }, "Resolved default run config as YAML.");
    m.def(
        "count_parameters", [](const std::string& yaml) { return count_parameters(parse_run_config(yaml).model); },
        py::arg("config_yaml") = "");
    m.def(
        "train",
        [](const std::string& yaml, std::vector<std::uint64_t> seeds, bool verbose) {
            TrainOptions o;
            o.config = parse_run_config(yaml);
            o.seeds = std::move(seeds);
            o.verbose = verbose;
            std::vector<SeedResult> res;
            {
                py::gil_scoped_release release;
                res = run_train(o);
            }
            py::list out;
            for (const auto& r : res) {
                py::dict d;
                d["seed"] = r.seed;
                d["run_dir"] = r.run_dir;
                d["epochs_run"] = r.fit.epochs_run;
                d["best_val_dsc"] = r.fit.best_dsc;
                py::dict tests;
                for (const auto& [name, s] : r.tests) tests[py::str(name)] = summary_dict(s);
                d["tests"] = tests;
                out.append(d);
            }
            return out;
        },
        py::arg("config_yaml"), py::arg("seeds") = std::vector<std::uint64_t>{}, py::arg("verbose") = false,
        "Train from a YAML config whose data section names corpus directories.");
    m.def(
        "evaluate",
        [](std::vector<std::filesystem::path> checkpoints, std::vector<std::filesystem::path> corpora,
           const std::filesystem::path& output) {
            EvalOptions o;
            o.checkpoints = std::move(checkpoints);
            o.corpora = std::move(corpora);
            o.output = output;
            std::vector<EvalRow> rows;
            {
                py::gil_scoped_release release;
                rows = run_eval(o);
            }
            py::dict out;
            for (const auto& r : rows) {
                py::list per;
                for (const auto& s : r.per_seed) per.append(summary_dict(s));
                out[py::str(r.corpus)] = per;
            }
            return out;
        },
        py::arg("checkpoints"), py::arg("corpora"), py::arg("output") = "eval",
        "Checkpoint stems (path without .atns/.json) scored on corpus directories.");
}
