// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "shears/adapters.hpp"
#include "shears/checkpoint.hpp"
#include "shears/data.hpp"
#include "shears/error.hpp"
#include "shears/linalg.hpp"
#include "shears/metrics.hpp"
#include "shears/model.hpp"
#include "shears/nls.hpp"
#include "shears/pipeline.hpp"
#include "shears/pruning.hpp"
#include "shears/search.hpp"

namespace py = pybind11;
using namespace shears;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

DenseMatrix to_matrix(const FloatArray& arr)
{
    if (arr.ndim() != 2) {
        throw std::invalid_argument("expected a 2-D array");
    }
    const auto rows = static_cast<std::size_t>(arr.shape(0));
    const auto cols = static_cast<std::size_t>(arr.shape(1));
    return DenseMatrix(rows, cols, std::vector<float>(arr.data(), arr.data() + rows * cols));
}

FloatArray to_array(const DenseMatrix& m)
{
    FloatArray out({m.rows(), m.cols()});
    std::copy(m.values().begin(), m.values().end(), out.mutable_data());
    return out;
}

py::object to_python(const nlohmann::json& j)
{
    return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o)
{
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Batch make_batch(const py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>& tokens,
                 const std::vector<std::uint32_t>& labels)
{
    if (tokens.ndim() != 2) {
        throw std::invalid_argument("tokens must be a 2-D array [batch x seq_len]");
    }
    Batch b;
    b.seq_len = static_cast<std::size_t>(tokens.shape(1));
    b.tokens.assign(tokens.data(), tokens.data() + tokens.size());
    b.labels = labels;
    return b;
}

} // namespace

PYBIND11_MODULE(_shears, m)
{
    m.doc() = "Sparse base model with elastic low-rank adapters";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ArtifactError>(m, "ArtifactError", PyExc_OSError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_blocks", &ModelConfig::n_blocks)
        .def_readwrite("d_ff", &ModelConfig::d_ff)
        .def_readwrite("n_classes", &ModelConfig::n_classes)
        .def_readwrite("seq_len", &ModelConfig::seq_len)
        .def_readwrite("seed", &ModelConfig::seed)
        .def_readwrite("position_scale", &ModelConfig::position_scale);

    py::class_<Batch>(m, "Batch")
        .def(py::init(&make_batch), py::arg("tokens"), py::arg("labels"))
        .def_property_readonly("size", &Batch::size)
        .def_readonly("seq_len", &Batch::seq_len)
        .def_property_readonly("tokens",
                               [](const Batch& b) {
                                   py::array_t<std::uint32_t> out({b.size(), b.seq_len});
                                   std::copy(b.tokens.begin(), b.tokens.end(), out.mutable_data());
                                   return out;
                               })
        .def_readonly("labels", &Batch::labels);

    py::class_<TaskSpec>(m, "TaskSpec")
        .def(py::init<>())
        .def_property(
            "kind", [](const TaskSpec& t) { return std::string(task_kind_name(t.kind)); },
            [](TaskSpec& t, const std::string& k) { t.kind = parse_task_kind(k); })
        .def_readwrite("n_train", &TaskSpec::n_train)
        .def_readwrite("n_val", &TaskSpec::n_val)
        .def_readwrite("n_test", &TaskSpec::n_test)
        .def_readwrite("seq_len", &TaskSpec::seq_len)
        .def_readwrite("vocab_size", &TaskSpec::vocab_size)
        .def_readwrite("n_classes", &TaskSpec::n_classes)
        .def_readwrite("seed", &TaskSpec::seed);

    py::class_<Splits>(m, "Splits")
        .def_readonly("train", &Splits::train)
        .def_readonly("val", &Splits::val)
        .def_readonly("test", &Splits::test);
    m.def("generate", &generate, py::arg("spec"));

    py::class_<Model>(m, "Model")
        .def_readonly("config", &Model::config)
        .def_property_readonly("module_names", &Model::module_names)
        .def("weight", [](const Model& model, const std::string& name) { return to_array(model.module(name).weight); })
        .def_property_readonly("frozen_hash", [](const Model& model) { return model.frozen_hash; });
    m.def(
        "init_model",
        [](const ModelConfig& cfg) {
            Rng rng(cfg.seed);
            return init_model(cfg, rng);
        },
        py::arg("config"));
    m.def("target_weights_hash", &target_weights_hash);

    py::class_<SuperAdapter>(m, "SuperAdapter")
        .def_readonly("alpha", &SuperAdapter::alpha)
        .def_readonly("trained", &SuperAdapter::trained)
        .def_property_readonly("module_names", &SuperAdapter::module_names)
        .def("a", [](const SuperAdapter& s, const std::string& name) { return to_array(s.module(name).a); })
        .def("b", [](const SuperAdapter& s, const std::string& name) { return to_array(s.module(name).b); });
    m.def(
        "attach",
        [](const Model& model, const std::vector<std::string>& targets, const std::vector<std::size_t>& ranks,
           double alpha, std::uint64_t seed) {
            Rng rng(seed);
            return attach(model, targets, ranks, alpha, rng);
        },
        py::arg("model"), py::arg("targets"), py::arg("rank_choices") = kDefaultRankChoices,
        py::arg("alpha") = kDefaultAlpha, py::arg("seed") = 0);
    m.def("maximal_config", &maximal_config);
    m.def("minimal_config", &minimal_config);
    m.def(
        "heuristic_config",
        [](const SuperAdapter& a) { return heuristic_config(SearchSpace::from_adapter(a)); }, py::arg("adapter"));

    m.def(
        "forward",
        [](const Model& model, const Batch& batch, const SuperAdapter* adapter,
           std::optional<SubAdapterConfig> config) {
            const AdapterView view{adapter, config ? &*config : nullptr};
            return to_array(forward(model, batch, view));
        },
        py::arg("model"), py::arg("batch"), py::arg("adapter") = nullptr, py::arg("config") = std::nullopt);
    m.def(
        "evaluate",
        [](const Model& model, const Batch& batch, const SuperAdapter* adapter,
           std::optional<SubAdapterConfig> config) {
            return evaluate(model, batch, {adapter, config ? &*config : nullptr});
        },
        py::arg("model"), py::arg("batch"), py::arg("adapter") = nullptr, py::arg("config") = std::nullopt);

    m.def(
        "wanda_scores",
        [](const FloatArray& w, const std::vector<float>& norms) { return to_array(wanda_scores(to_matrix(w), norms)); },
        py::arg("weight"), py::arg("norms"));
    m.def(
        "prune_rows",
        [](const FloatArray& w, const FloatArray& scores, double s) {
            return to_array(prune_rows(to_matrix(w), to_matrix(scores), s));
        },
        py::arg("weight"), py::arg("scores"), py::arg("sparsity"));
    m.def(
        "sparsify_model",
        [](const Model& model, const Batch& calib, double sparsity, const std::string& method) {
            auto [pruned, report] =
                sparsify_model(model, {calib}, model.module_names(), sparsity, parse_prune_method(method));
            return py::make_tuple(std::move(pruned), to_python(to_json(report)));
        },
        py::arg("model"), py::arg("calib"), py::arg("sparsity"), py::arg("method") = "wanda");
    m.def(
        "count_params",
        [](const Model& model, const SuperAdapter* adapter, std::optional<SubAdapterConfig> config, bool merged) {
            return to_python(to_json(count_params(model, adapter, config ? &*config : nullptr, merged)));
        },
        py::arg("model"), py::arg("adapter") = nullptr, py::arg("config") = std::nullopt, py::arg("merged") = false);

    m.def(
        "train",
        [](const Model& model, const SuperAdapter& adapter, const Batch& train_data, const Batch& val_data,
           const py::dict& options) {
            TrainConfig cfg;
            if (options.contains("epochs")) cfg.epochs = options["epochs"].cast<std::size_t>();
            if (options.contains("batch_size")) cfg.batch_size = options["batch_size"].cast<std::size_t>();
            if (options.contains("learning_rate")) cfg.learning_rate = options["learning_rate"].cast<double>();
            if (options.contains("grad_clip")) cfg.grad_clip = options["grad_clip"].cast<double>();
            if (options.contains("seed")) cfg.seed = options["seed"].cast<std::uint64_t>();
            if (options.contains("linear_decay") && options["linear_decay"].cast<bool>()) {
                cfg.schedule = LrSchedule::Linear;
            }
            if (options.contains("mode") && options["mode"].cast<std::string>() == "fixed_lora") {
                cfg.mode = TrainMode::FixedLora;
            }
            TrainResult r = train(model, adapter, train_data, val_data, cfg);
            py::list epochs;
            for (const auto& e : r.log.epochs) {
                epochs.append(py::make_tuple(e.epoch, e.val_loss, e.val_accuracy));
            }
            return py::make_tuple(std::move(r.adapter), epochs);
        },
        py::arg("model"), py::arg("adapter"), py::arg("train"), py::arg("val"), py::arg("options") = py::dict());

    m.def(
        "hill_climb",
        [](const std::function<std::pair<double, std::size_t>(const SubAdapterConfig&)>& fn,
           const std::vector<std::pair<std::string, std::vector<std::size_t>>>& space,
           const SubAdapterConfig& start, std::size_t budget) {
            EvalCache cache([&fn](const SubAdapterConfig& c) {
                const auto [metric, params] = fn(c);
                return Objectives{metric, params};
            });
            const auto r = hill_climb(cache, start, SearchSpace(space), budget);
            return py::make_tuple(r.best, r.best_objectives.metric, r.evaluations);
        },
        py::arg("evaluator"), py::arg("space"), py::arg("start"), py::arg("budget"));
    m.def(
        "nondominated_sort",
        [](const std::vector<std::pair<double, std::size_t>>& points) {
            std::vector<Candidate> cands;
            for (const auto& [metric, params] : points) {
                cands.push_back({{}, Objectives{metric, params}});
            }
            return nondominated_sort(cands);
        },
        py::arg("points"));

    m.def(
        "load_config",
        [](std::optional<std::filesystem::path> path, const std::vector<std::string>& sets,
           std::optional<std::uint64_t> seed) {
            return to_python(to_json(load_pipeline_config(path, {sets, seed})));
        },
        py::arg("path") = std::nullopt, py::arg("sets") = std::vector<std::string>{}, py::arg("seed") = std::nullopt);

    auto with_config = [](const py::object& cfg) {
        PipelineConfig c = pipeline_config_from_json(from_python(cfg));
        c.validate();
        return c;
    };
    m.def("cmd_prune", [with_config](const py::object& c) { return to_python(cmd_prune(with_config(c))); });
    m.def(
        "cmd_train",
        [with_config](const py::object& c, bool dense) { return to_python(cmd_train(with_config(c), dense)); },
        py::arg("config"), py::arg("dense") = false);
    m.def("cmd_search", [with_config](const py::object& c) { return to_python(cmd_search(with_config(c))); });
    m.def(
        "cmd_eval",
        [with_config](const py::object& c, const std::string& which) {
            return to_python(cmd_eval(with_config(c), which));
        },
        py::arg("config"), py::arg("which") = "best");
    m.def("cmd_bench", [with_config](const py::object& c) { return to_python(cmd_bench(with_config(c))); });
    m.def("cmd_report", [with_config](const py::object& c) { return to_python(cmd_report(with_config(c))); });
    m.def(
        "cmd_pipeline",
        [with_config](const py::object& c, bool dense) { return to_python(cmd_pipeline(with_config(c), dense)); },
        py::arg("config"), py::arg("dense") = false);
}
