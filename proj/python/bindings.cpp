#include <memory>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "tmclass/checkpoint.hpp"
#include "tmclass/config.hpp"
#include "tmclass/data.hpp"
#include "tmclass/errors.hpp"
#include "tmclass/evaluation.hpp"
#include "tmclass/sampler.hpp"
#include "tmclass/schedules.hpp"
#include "tmclass/taxonomy.hpp"
#include "tmclass/training.hpp"

namespace py = pybind11;
using namespace tmclass;

namespace {

// Trained estimator plus its parameters; the predictor refers to the heap-held estimator.
struct Model {
    std::shared_ptr<const Estimator> estimator;
    EstimatorParams params;
    TargetPredictor predictor;

    Model(EstimatorConfig config, EstimatorParams p)
        : estimator(std::make_shared<const Estimator>(std::move(config))), params(std::move(p)) {
        if (params.values.size() != estimator->parameter_count()) {
            throw InvalidArgument("parameter count does not match the estimator configuration");
        }
        predictor = make_predictor(*estimator, params);
    }
};

SamplerConfig sampler_for(std::size_t num_steps, const std::string& schedule_json) {
    SamplerConfig s;
    s.num_steps = num_steps;
    if (!schedule_json.empty()) nlohmann::json::parse(schedule_json).get_to(s.schedule);
    s.validate();
    return s;
}

template <typename T>
T from_json_text(const std::string& text) {
    T v{};
    if (!text.empty()) {
        try {
            nlohmann::json::parse(text).get_to(v);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(e.what());
        }
    }
    return v;
}

}  // namespace

PYBIND11_MODULE(_tmclass, m) {
    m.doc() = "Flow-matching style classifier core";

    auto invalid = py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<DimensionTooSmall>(m, "DimensionTooSmall", invalid.ptr());
    py::register_exception<OutOfDomain>(m, "OutOfDomain", PyExc_ValueError);
    auto degenerate = py::register_exception<DegenerateInput>(m, "DegenerateInput", PyExc_ArithmeticError);
    py::register_exception<DegenerateSample>(m, "DegenerateSample", degenerate.ptr());
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.attr("UNLABELED") = kUnlabeled;

    // taxonomy
    m.def("encode_class", &encode_class, py::arg("index"), py::arg("dim"));

    py::class_<TaxonomyCodebook>(m, "Codebook")
        .def(py::init([](std::vector<std::string> labels, std::size_t dim) {
                 return build_codebook(ClassTaxonomy(std::move(labels)), dim);
             }),
             py::arg("labels"), py::arg("dim"))
        .def_property_readonly("dim", &TaxonomyCodebook::dim)
        .def_property_readonly("labels", [](const TaxonomyCodebook& c) { return c.taxonomy().labels(); })
        .def_property_readonly("codewords", &TaxonomyCodebook::codewords)
        .def("codeword", &TaxonomyCodebook::codeword, py::arg("index"))
        .def("manifest_json", &TaxonomyCodebook::manifest_json)
        .def_static("from_manifest_json", &TaxonomyCodebook::from_manifest_json, py::arg("text"))
        .def("__len__", &TaxonomyCodebook::num_classes);

    m.def(
        "classify",
        [](const Eigen::VectorXd& estimate, const TaxonomyCodebook& cb) {
            auto c = classify(estimate, cb);
            return py::make_tuple(c.predicted, c.scores);
        },
        py::arg("estimate"), py::arg("codebook"), "Cosine argmax; returns (index, scores).");

    // schedules
    auto sched = m.def_submodule("schedule");
    sched.def("alpha", &schedule::alpha, py::arg("t"), py::arg("k"));
    sched.def("alpha_derivative", &schedule::alpha_derivative, py::arg("t"), py::arg("k"));
    sched.def("std", &schedule::std, py::arg("t"), py::arg("sigma"));
    sched.def("std_log_derivative", &schedule::std_log_derivative, py::arg("t"));

    // data
    py::class_<FeatureDataset>(m, "Dataset")
        .def_property_readonly("dim", &FeatureDataset::dim)
        .def_property_readonly("num_condition_layers", &FeatureDataset::num_condition_layers)
        .def_property_readonly("labels", [](const FeatureDataset& d) { return d.header().labels; })
        .def("__len__", &FeatureDataset::size)
        .def("label", [](const FeatureDataset& d, std::size_t i) -> std::optional<std::uint32_t> {
            return d.records().at(i).label;
        })
        .def("terminal", [](const FeatureDataset& d, std::size_t i) -> Eigen::VectorXf {
            return d.records().at(i).terminal;
        })
        .def("conditions", [](const FeatureDataset& d, std::size_t i) -> Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> {
            return d.records().at(i).condition_stack;
        })
        .def("class_counts", &FeatureDataset::class_counts)
        .def("subset", &FeatureDataset::subset, py::arg("indices"))
        .def("write", [](const FeatureDataset& d, const std::filesystem::path& p) { write_dataset(d, p); })
        .def("summary", [](const FeatureDataset& d) { return summarize(d); })
        .def("bitwise_equal", [](const FeatureDataset& a, const FeatureDataset& b) { return bitwise_equal(a, b); });

    m.def(
        "read_dataset", [](const std::filesystem::path& p) { return read_dataset(p); }, py::arg("path"));
    m.def(
        "generate_synthetic", [](const std::string& spec_json) { return generate_synthetic(from_json_text<SyntheticSpec>(spec_json)); },
        py::arg("spec_json") = "", "Synthetic dataset from a JSON spec (same keys as the config's \"synthetic\" block).");
    m.def(
        "split",
        [](const FeatureDataset& d, double train, double validation, double test, std::uint64_t seed) {
            auto s = split(d, SplitFractions{train, validation, test}, seed);
            return py::make_tuple(std::move(s.train), std::move(s.validation), std::move(s.test));
        },
        py::arg("dataset"), py::arg("train") = 0.7, py::arg("validation") = 0.15, py::arg("test") = 0.15,
        py::arg("seed") = 0);

    // model
    py::class_<Model>(m, "Model")
        .def_property_readonly("parameter_count", [](const Model& md) { return md.estimator->parameter_count(); })
        .def_property_readonly("config_json",
                               [](const Model& md) { return nlohmann::json(md.estimator->config()).dump(); })
        .def(
            "predict_target",
            [](const Model& md, const Eigen::VectorXd& x_t, const Eigen::MatrixXd& conditions, double t) {
                return md.estimator->forward(md.params, x_t, conditions, t);
            },
            py::arg("x_t"), py::arg("conditions"), py::arg("t"))
        .def(
            "infer",
            [](const Model& md, const FeatureDataset& d, const TaxonomyCodebook& cb, std::size_t num_steps,
               const std::string& schedule_json) {
                const auto results = infer_batch(d.records(), md.predictor, cb, sampler_for(num_steps, schedule_json));
                std::vector<std::size_t> out;
                out.reserve(results.size());
                for (const auto& r : results) out.push_back(r.predicted);
                return out;
            },
            py::arg("dataset"), py::arg("codebook"), py::arg("num_steps") = 20, py::arg("schedule_json") = "",
            py::call_guard<py::gil_scoped_release>())
        .def(
            "evaluate",
            [](const Model& md, const FeatureDataset& d, const TaxonomyCodebook& cb, std::size_t num_steps,
               const std::string& schedule_json) {
                return evaluate(d, md.predictor, cb, sampler_for(num_steps, schedule_json)).to_json().dump();
            },
            py::arg("dataset"), py::arg("codebook"), py::arg("num_steps") = 20, py::arg("schedule_json") = "")
        .def("save", [](const Model& md, const std::filesystem::path& p) {
            save_checkpoint(Checkpoint{md.estimator->config(), md.params, std::nullopt}, p);
        });

    m.def(
        "load_model",
        [](const std::filesystem::path& p) {
            auto ckpt = load_checkpoint(p);
            return Model(ckpt.config, std::move(ckpt.params));
        },
        py::arg("path"));

    m.def(
        "train",
        [](const FeatureDataset& data, const std::string& estimator_json, const std::string& train_json) {
            auto ec = from_json_text<EstimatorConfig>(estimator_json);
            auto tc = from_json_text<TrainConfig>(train_json);
            ec.dim = data.dim();
            ec.num_condition_layers = data.num_condition_layers();
            ec.validate();
            const Estimator est(ec);
            const auto cb = build_codebook(data.taxonomy(), data.dim());
            TrainResult result;
            std::vector<double> losses;
            {
                py::gil_scoped_release release;
                result = train_loop(data, nullptr, tc, est, cb);
            }
            for (const auto& mr : result.metrics) losses.push_back(mr.loss);
            return py::make_tuple(Model(ec, std::move(result.state.params)), losses);
        },
        py::arg("dataset"), py::arg("estimator_json") = "", py::arg("train_json") = "",
        "Trains an estimator on a labeled dataset; returns (model, per-step losses).");
}
