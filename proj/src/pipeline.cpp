// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "shears/checkpoint.hpp"
#include "shears/error.hpp"
#include "shears/metrics.hpp"

namespace shears {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* strategy_name(SearchStrategy s)
{
    switch (s) {
    case SearchStrategy::Heuristic: return "heuristic";
    case SearchStrategy::HillClimb: return "hillclimb";
    case SearchStrategy::Evolutionary: return "evolutionary";
    }
    return "?";
}

SearchStrategy parse_strategy(const std::string& s)
{
    if (s == "heuristic") {
        return SearchStrategy::Heuristic;
    }
    if (s == "hillclimb") {
        return SearchStrategy::HillClimb;
    }
    if (s == "evolutionary") {
        return SearchStrategy::Evolutionary;
    }
    throw ConfigError("search.strategy: unknown strategy '" + s + "' (heuristic, hillclimb, evolutionary)");
}

// Reject keys absent from the defaults tree; arrays are leaves.
void check_keys(const json& given, const json& reference, const std::string& prefix)
{
    if (!given.is_object()) {
        throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    }
    for (const auto& [key, value] : given.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!reference.contains(key)) {
            throw ConfigError("unknown config key '" + path + "'");
        }
        if (reference[key].is_object()) {
            check_keys(value, reference[key], path);
        }
    }
}

template <typename T>
T get(const json& j, const std::string& section, const char* key)
{
    try {
        return j.at(section).at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(section + "." + key + ": " + e.what());
    }
}

std::size_t get_count(const json& j, const std::string& section, const char* key)
{
    const json& v = j.at(section).at(key);
    if (!v.is_number_unsigned()) {
        throw ConfigError(section + "." + key + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
}

json parse_value(const std::string& text)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return json(text);
    }
}

struct Clock {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    [[nodiscard]] double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

struct Workdir {
    fs::path root;
    [[nodiscard]] fs::path model() const { return root / "model"; }
    [[nodiscard]] fs::path adapter() const { return root / "adapter"; }
    [[nodiscard]] fs::path logs() const { return root / "logs"; }
    [[nodiscard]] fs::path search() const { return root / "search"; }
    [[nodiscard]] fs::path reports() const { return root / "reports"; }

    void create() const
    {
        for (const auto& d : {model(), adapter(), logs(), search(), reports()}) {
            fs::create_directories(d);
        }
    }
};

Workdir workdir_of(const PipelineConfig& cfg)
{
    return Workdir{resolve_workdir(cfg)};
}

void check_task_matches(const TaskSpec& task, const ModelConfig& model)
{
    if (task.seq_len != model.seq_len) {
        throw ConfigError("task.seq_len (" + std::to_string(task.seq_len) + ") differs from model.seq_len (" +
                          std::to_string(model.seq_len) + ")");
    }
    if (task.vocab_size > model.vocab_size) {
        throw ConfigError("task.vocab_size exceeds model.vocab_size");
    }
    if (task.n_classes != model.n_classes) {
        throw ConfigError("task.n_classes differs from model.n_classes");
    }
}

Model fresh_model(const PipelineConfig& cfg)
{
    Rng rng(cfg.model.seed);
    return init_model(cfg.model, rng);
}

Model load_frozen_model(const Workdir& wd, const PipelineConfig& cfg)
{
    if (!fs::exists(wd.model() / "meta.json")) {
        throw ArtifactError("no model checkpoint in " + wd.model().string() + "; run `shears prune` or pass --dense");
    }
    Model model = load_model(wd.model()).model;
    check_task_matches(cfg.task, model.config);
    require_frozen(model);
    return model;
}

SuperAdapter load_trained_adapter(const Workdir& wd, const Model& model)
{
    if (!fs::exists(wd.adapter() / "meta.json")) {
        throw ArtifactError("no adapter checkpoint in " + wd.adapter().string() + "; run `shears train` first");
    }
    SuperAdapter adapter = load_adapter(wd.adapter());
    for (const auto& m : adapter.modules) {
        if (!model.has_module(m.name)) {
            throw ArtifactError("adapter targets unknown module '" + m.name + "'");
        }
        const auto& w = model.module(m.name).weight;
        if (m.a.cols() != w.cols() || m.b.rows() != w.rows()) {
            throw ArtifactError("adapter '" + m.name + "' does not fit the model's weight shape");
        }
    }
    if (!adapter.trained) {
        throw ArtifactError("adapter in " + wd.adapter().string() + " has not been trained");
    }
    return adapter;
}

std::size_t active_params(const Model& model, const SuperAdapter& adapter, const SubAdapterConfig& config)
{
    return count_params(model, &adapter, &config).adapter_active_params;
}

Evaluator make_evaluator(const Model& model, const SuperAdapter& adapter, const Batch& val)
{
    return [&model, &adapter, &val](const SubAdapterConfig& c) {
        const auto [l, acc] = evaluate(model, val, {&adapter, &c});
        (void)l;
        return Objectives{acc, active_params(model, adapter, c)};
    };
}

json candidate_json(const SubAdapterConfig& c, const Objectives& o)
{
    return {{"config", to_json(c)}, {"metric", o.metric}, {"params", o.params}};
}

json ranked_table(const EvalCache& cache)
{
    std::vector<std::pair<SubAdapterConfig, Objectives>> rows;
    for (const auto& [fp, entry] : cache.entries()) {
        rows.push_back(entry);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.second.metric != b.second.metric) {
            return a.second.metric > b.second.metric;
        }
        return a.second.params < b.second.params;
    });
    json table = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        json row = candidate_json(rows[i].first, rows[i].second);
        row["rank"] = i + 1;
        table.push_back(std::move(row));
    }
    return table;
}

SubAdapterConfig resolve_which(const Workdir& wd, const SuperAdapter& adapter, const std::string& which)
{
    if (which == "heuristic") {
        return heuristic_config(SearchSpace::from_adapter(adapter));
    }
    if (which == "maximal") {
        return maximal_config(adapter);
    }
    if (which == "minimal") {
        return minimal_config(adapter);
    }
    fs::path file = which == "best" ? wd.search() / "best.json" : fs::path(which);
    if (!fs::exists(file)) {
        throw ArtifactError(which == "best" ? "no search result at " + file.string() + "; run `shears search` first"
                                            : "no such config file " + file.string());
    }
    json j = read_json(file);
    if (j.contains("config")) {
        j = j["config"];
    }
    SubAdapterConfig c;
    try {
        c = sub_config_from_json(j);
        validate_config(adapter, c);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(file.string() + ": " + e.what());
    }
    return c;
}

json stage_prune(const PipelineConfig& cfg, const Workdir& wd)
{
    const Clock clock;
    const Splits data = generate(cfg.task);
    const Model model = fresh_model(cfg);
    const auto targets = expand_targets(cfg.model, cfg.prune.targets);
    const std::vector<Batch> calib{data.train.slice(0, std::min(cfg.prune.calib_size, data.train.size()))};
    auto [pruned, report] = sparsify_model(model, calib, targets, cfg.prune.sparsity, cfg.prune.method);
    save_model(pruned, wd.model(), PruneInfo{cfg.prune.method, cfg.prune.sparsity, targets});
    const json rj = to_json(report);
    write_json(wd.reports() / "prune.json", rj);
    write_json(wd.reports() / "params_pruned.json", to_json(count_params(pruned)));
    return {{"frozen_hash", *pruned.frozen_hash},
            {"target_sparsity", report.target_sparsity},
            {"global_sparsity", count_params(pruned).global_sparsity()},
            {"seconds", clock.seconds()}};
}

json stage_train(const PipelineConfig& cfg, const Workdir& wd, bool dense)
{
    const Clock clock;
    Model model;
    if (dense) {
        model = fresh_model(cfg);
        freeze(model);
        save_model(model, wd.model(), std::nullopt);
        write_json(wd.reports() / "params_pruned.json", to_json(count_params(model)));
    } else {
        model = load_frozen_model(wd, cfg);
    }
    const Splits data = generate(cfg.task);
    Rng init_rng = Rng(cfg.train.seed).split(3);
    SuperAdapter adapter =
        attach(model, expand_targets(model.config, cfg.adapter.targets), cfg.adapter.rank_choices, cfg.adapter.alpha,
               init_rng);
    adapter.scaling = cfg.adapter.scaling;
    TrainResult result = train(model, std::move(adapter), data.train, data.val, cfg.train);
    save_adapter(result.adapter, wd.adapter());
    result.log.write_jsonl(wd.logs() / "train.jsonl");
    const auto& last = result.log.epochs.empty() ? EpochRecord{} : result.log.epochs.back();
    const json summary{{"mode", cfg.train.mode == TrainMode::Nls ? "nls" : "fixed_lora"},
                       {"dense", dense},
                       {"steps", result.log.steps.size()},
                       {"epochs", result.log.epochs.size()},
                       {"final_val_loss", last.val_loss},
                       {"final_val_accuracy", last.val_accuracy},
                       {"frozen_hash", *model.frozen_hash}};
    write_json(wd.reports() / "train.json", summary);
    json out = summary;
    out["seconds"] = clock.seconds();
    return out;
}

json stage_search(const PipelineConfig& cfg, const Workdir& wd)
{
    const Clock clock;
    const Model model = load_frozen_model(wd, cfg);
    const SuperAdapter adapter = load_trained_adapter(wd, model);
    const Splits data = generate(cfg.task);
    const SearchSpace space = SearchSpace::from_adapter(adapter);
    EvalCache cache(make_evaluator(model, adapter, data.val));

    const SubAdapterConfig heuristic = heuristic_config(space);
    const Objectives heuristic_obj = cache(heuristic);
    SubAdapterConfig best = heuristic;
    Objectives best_obj = heuristic_obj;
    json extra = json::object();

    switch (cfg.search.strategy) {
    case SearchStrategy::Heuristic:
        break;
    case SearchStrategy::HillClimb: {
        const auto hc = hill_climb(cache, heuristic, space, cfg.search.budget);
        best = hc.best;
        best_obj = hc.best_objectives;
        json trace = json::array();
        for (const auto& c : hc.trace) {
            trace.push_back(candidate_json(c.config, *c.objectives));
        }
        extra["trace"] = trace;
        break;
    }
    case SearchStrategy::Evolutionary: {
        EvolutionOptions opts;
        opts.pop_size = cfg.search.pop_size;
        opts.generations = cfg.search.generations;
        if (cfg.search.reference_survival) {
            opts.reference_points = cfg.search.reference_points;
            if (opts.reference_points.empty()) {
                const auto max_obj = cache(maximal_config(adapter));
                const double seen = std::max(heuristic_obj.metric, max_obj.metric);
                const auto min_params = active_params(model, adapter, minimal_config(adapter));
                opts.reference_points.push_back({seen, static_cast<double>(min_params)});
            }
        }
        Rng rng(cfg.search.seed);
        const auto evo = evolutionary_search(cache, space, opts, rng);
        best = evo.best.config;
        best_obj = *evo.best.objectives;
        json front = json::array();
        for (const auto& c : evo.front) {
            front.push_back(candidate_json(c.config, *c.objectives));
        }
        extra["front"] = front;
        json refs = json::array();
        for (const auto& r : opts.reference_points) {
            refs.push_back({{"metric", r.metric}, {"params", r.params}});
        }
        extra["reference_points"] = refs;
        break;
    }
    }

    json results{{"strategy", strategy_name(cfg.search.strategy)},
                 {"evaluations", cache.invocations()},
                 {"heuristic", candidate_json(heuristic, heuristic_obj)},
                 {"best", candidate_json(best, best_obj)},
                 {"ranked", ranked_table(cache)}};
    results.update(extra);
    write_json(wd.search() / "results.json", results);
    write_json(wd.search() / "best.json", candidate_json(best, best_obj));
    return {{"strategy", strategy_name(cfg.search.strategy)},
            {"evaluations", cache.invocations()},
            {"heuristic_metric", heuristic_obj.metric},
            {"best", candidate_json(best, best_obj)},
            {"seconds", clock.seconds()}};
}

json stage_eval(const PipelineConfig& cfg, const Workdir& wd, const std::string& which)
{
    const Model model = load_frozen_model(wd, cfg);
    const Splits data = generate(cfg.task);
    json out{{"which", which}};
    if (which == "base") {
        const auto [tl, ta] = evaluate(model, data.test, {});
        const auto [vl, va] = evaluate(model, data.val, {});
        out.update({{"test_loss", tl},
                    {"test_accuracy", ta},
                    {"val_loss", vl},
                    {"val_accuracy", va},
                    {"params", to_json(count_params(model))}});
    } else {
        const SuperAdapter adapter = load_trained_adapter(wd, model);
        const SubAdapterConfig c = resolve_which(wd, adapter, which);
        const auto [tl, ta] = evaluate(model, data.test, {&adapter, &c});
        const auto [vl, va] = evaluate(model, data.val, {&adapter, &c});
        out.update({{"config", to_json(c)},
                    {"test_loss", tl},
                    {"test_accuracy", ta},
                    {"val_loss", vl},
                    {"val_accuracy", va},
                    {"params", to_json(count_params(model, &adapter, &c))}});
    }
    std::string tag = which;
    if (tag != "base" && tag != "heuristic" && tag != "maximal" && tag != "minimal" && tag != "best") {
        tag = "custom";
    }
    write_json(wd.reports() / ("eval_" + tag + ".json"), out);
    return out;
}

json stage_bench(const PipelineConfig& cfg, const Workdir& wd)
{
    const Model model = load_frozen_model(wd, cfg);
    std::optional<SuperAdapter> adapter;
    SubAdapterConfig c;
    if (fs::exists(wd.adapter() / "meta.json")) {
        adapter = load_trained_adapter(wd, model);
        c = fs::exists(wd.search() / "best.json") ? resolve_which(wd, *adapter, "best")
                                                  : heuristic_config(SearchSpace::from_adapter(*adapter));
    }
    const BenchReport report = bench_inference(model, adapter ? &*adapter : nullptr, adapter ? &c : nullptr,
                                               {1, 16, 64}, 5, cfg.model.seed);
    const json out = to_json(report);
    write_json(wd.reports() / "bench.json", out);
    return out;
}

json stage_report(const PipelineConfig& cfg, const Workdir& wd)
{
    const Model model = load_frozen_model(wd, cfg);
    json out{{"base", to_json(count_params(model))}};
    if (fs::exists(wd.adapter() / "meta.json")) {
        const SuperAdapter adapter = load_trained_adapter(wd, model);
        const SubAdapterConfig c = fs::exists(wd.search() / "best.json")
                                       ? resolve_which(wd, adapter, "best")
                                       : heuristic_config(SearchSpace::from_adapter(adapter));
        out["config"] = to_json(c);
        out["with_adapter"] = to_json(count_params(model, &adapter, &c, true));
    }
    write_json(wd.reports() / "params.json", out);
    return out;
}

} // namespace

void PipelineConfig::validate() const
{
    auto wrap = [](const char* section, auto&& fn) {
        try {
            fn();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string(section) + ": " + e.what());
        }
    };
    wrap("model", [&] { model.validate(); });
    wrap("task", [&] { task.validate(); });
    check_task_matches(task, model);
    if (!(prune.sparsity >= 0.0 && prune.sparsity < 1.0)) {
        throw ConfigError("prune.sparsity must be in [0, 1), got " + std::to_string(prune.sparsity));
    }
    if (prune.calib_size < 1) {
        throw ConfigError("prune.calib_size must be >= 1");
    }
    (void)expand_targets(model, prune.targets);
    (void)expand_targets(model, adapter.targets);
    wrap("adapter.rank_choices", [&] { validate_rank_choices(adapter.rank_choices); });
    if (!(adapter.alpha > 0.0)) {
        throw ConfigError("adapter.alpha must be > 0");
    }
    wrap("train", [&] { train.validate(); });
    if (train.mode == TrainMode::FixedLora && train.fixed_rank != 0 &&
        std::find(adapter.rank_choices.begin(), adapter.rank_choices.end(), train.fixed_rank) ==
            adapter.rank_choices.end()) {
        throw ConfigError("train.fixed_rank " + std::to_string(train.fixed_rank) + " is not in adapter.rank_choices");
    }
    if (search.budget < 1) {
        throw ConfigError("search.budget must be >= 1");
    }
    if (search.pop_size < 4 || search.pop_size % 2 != 0) {
        throw ConfigError("search.pop_size must be even and >= 4");
    }
    if (search.generations < 1) {
        throw ConfigError("search.generations must be >= 1");
    }
}

json to_json(const PipelineConfig& c)
{
    json refs = json::array();
    for (const auto& r : c.search.reference_points) {
        refs.push_back({{"metric", r.metric}, {"params", r.params}});
    }
    return {
        {"model", to_json(c.model)},
        {"task", to_json(c.task)},
        {"prune",
         {{"method", prune_method_name(c.prune.method)},
          {"sparsity", c.prune.sparsity},
          {"targets", c.prune.targets},
          {"calib_size", c.prune.calib_size}}},
        {"adapter",
         {{"targets", c.adapter.targets},
          {"rank_choices", c.adapter.rank_choices},
          {"alpha", c.adapter.alpha},
          {"scaling", c.adapter.scaling == AdapterScaling::ActiveRank ? "active_rank" : "max_rank"}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"schedule", c.train.schedule == LrSchedule::Constant ? "constant" : "linear"},
          {"optimizer", c.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"epsilon", c.train.epsilon},
          {"grad_clip", c.train.grad_clip},
          {"seed", c.train.seed},
          {"mode", c.train.mode == TrainMode::Nls ? "nls" : "fixed_lora"},
          {"fixed_rank", c.train.fixed_rank}}},
        {"search",
         {{"strategy", strategy_name(c.search.strategy)},
          {"budget", c.search.budget},
          {"pop_size", c.search.pop_size},
          {"generations", c.search.generations},
          {"reference_survival", c.search.reference_survival},
          {"reference_points", refs},
          {"seed", c.search.seed}}},
        {"paths", {{"workdir", c.workdir.string()}}},
    };
}

PipelineConfig pipeline_config_from_json(const json& given)
{
    const json defaults = to_json(PipelineConfig{});
    check_keys(given, defaults, "");
    json j = defaults;
    j.merge_patch(given);
    check_keys(j, defaults, "");

    PipelineConfig c;
    c.model.vocab_size = get_count(j, "model", "vocab_size");
    c.model.d_model = get_count(j, "model", "d_model");
    c.model.n_blocks = get_count(j, "model", "n_blocks");
    c.model.d_ff = get_count(j, "model", "d_ff");
    c.model.n_classes = get_count(j, "model", "n_classes");
    c.model.seq_len = get_count(j, "model", "seq_len");
    c.model.seed = get<std::uint64_t>(j, "model", "seed");
    c.model.position_scale = get<float>(j, "model", "position_scale");

    try {
        c.task.kind = parse_task_kind(get<std::string>(j, "task", "kind"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("task.kind: ") + e.what());
    }
    c.task.n_train = get_count(j, "task", "n_train");
    c.task.n_val = get_count(j, "task", "n_val");
    c.task.n_test = get_count(j, "task", "n_test");
    c.task.seq_len = get_count(j, "task", "seq_len");
    c.task.vocab_size = get_count(j, "task", "vocab_size");
    c.task.n_classes = get_count(j, "task", "n_classes");
    c.task.seed = get<std::uint64_t>(j, "task", "seed");

    try {
        c.prune.method = parse_prune_method(get<std::string>(j, "prune", "method"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("prune.method: ") + e.what());
    }
    c.prune.sparsity = get<double>(j, "prune", "sparsity");
    c.prune.targets = get<std::vector<std::string>>(j, "prune", "targets");
    c.prune.calib_size = get_count(j, "prune", "calib_size");

    c.adapter.targets = get<std::vector<std::string>>(j, "adapter", "targets");
    c.adapter.rank_choices = get<std::vector<std::size_t>>(j, "adapter", "rank_choices");
    c.adapter.alpha = get<double>(j, "adapter", "alpha");
    const auto scaling = get<std::string>(j, "adapter", "scaling");
    if (scaling == "active_rank") {
        c.adapter.scaling = AdapterScaling::ActiveRank;
    } else if (scaling == "max_rank") {
        c.adapter.scaling = AdapterScaling::MaxRank;
    } else {
        throw ConfigError("adapter.scaling: expected active_rank or max_rank, got '" + scaling + "'");
    }

    c.train.epochs = get_count(j, "train", "epochs");
    c.train.batch_size = get_count(j, "train", "batch_size");
    c.train.learning_rate = get<double>(j, "train", "learning_rate");
    const auto schedule = get<std::string>(j, "train", "schedule");
    if (schedule == "constant") {
        c.train.schedule = LrSchedule::Constant;
    } else if (schedule == "linear") {
        c.train.schedule = LrSchedule::Linear;
    } else {
        throw ConfigError("train.schedule: expected constant or linear, got '" + schedule + "'");
    }
    const auto optimizer = get<std::string>(j, "train", "optimizer");
    if (optimizer == "adam") {
        c.train.optimizer = OptimizerKind::Adam;
    } else if (optimizer == "sgd") {
        c.train.optimizer = OptimizerKind::Sgd;
    } else {
        throw ConfigError("train.optimizer: expected adam or sgd, got '" + optimizer + "'");
    }
    c.train.beta1 = get<double>(j, "train", "beta1");
    c.train.beta2 = get<double>(j, "train", "beta2");
    c.train.epsilon = get<double>(j, "train", "epsilon");
    c.train.grad_clip = get<double>(j, "train", "grad_clip");
    c.train.seed = get<std::uint64_t>(j, "train", "seed");
    const auto mode = get<std::string>(j, "train", "mode");
    if (mode == "nls") {
        c.train.mode = TrainMode::Nls;
    } else if (mode == "fixed_lora") {
        c.train.mode = TrainMode::FixedLora;
    } else {
        throw ConfigError("train.mode: expected nls or fixed_lora, got '" + mode + "'");
    }
    c.train.fixed_rank = get_count(j, "train", "fixed_rank");

    c.search.strategy = parse_strategy(get<std::string>(j, "search", "strategy"));
    c.search.budget = get_count(j, "search", "budget");
    c.search.pop_size = get_count(j, "search", "pop_size");
    c.search.generations = get_count(j, "search", "generations");
    c.search.reference_survival = get<bool>(j, "search", "reference_survival");
    for (const auto& r : j["search"]["reference_points"]) {
        try {
            c.search.reference_points.push_back({r.at("metric").get<double>(), r.at("params").get<double>()});
        } catch (const json::exception& e) {
            throw ConfigError(std::string("search.reference_points: ") + e.what());
        }
    }
    c.search.seed = get<std::uint64_t>(j, "search", "seed");
    c.workdir = get<std::string>(j, "paths", "workdir");
    return c;
}

void apply_seed(PipelineConfig& cfg, std::uint64_t seed)
{
    cfg.model.seed = seed;
    cfg.train.seed = seed;
    cfg.search.seed = seed;
}

PipelineConfig load_pipeline_config(const std::optional<fs::path>& path, const ConfigOverrides& overrides)
{
    json j = json::object();
    if (path) {
        if (!fs::exists(*path)) {
            throw ConfigError("config file not found: " + path->string());
        }
        std::ifstream in(*path);
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError(path->string() + ": " + e.what());
        }
    }
    const json defaults = to_json(PipelineConfig{});
    check_keys(j, defaults, "");
    json merged = defaults;
    merged.merge_patch(j);
    for (const auto& s : overrides.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("--set expects key=value, got '" + s + "'");
        }
        const std::string key = s.substr(0, eq);
        json* node = &merged;
        std::size_t begin = 0;
        while (true) {
            const auto dot = key.find('.', begin);
            const std::string part = key.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
            if (!node->is_object() || !node->contains(part)) {
                throw ConfigError("--set: unknown config key '" + key + "'");
            }
            node = &(*node)[part];
            if (dot == std::string::npos) {
                break;
            }
            begin = dot + 1;
        }
        if (node->is_object()) {
            throw ConfigError("--set: '" + key + "' is a section, not a field");
        }
        json value = parse_value(s.substr(eq + 1));
        if (node->is_string() && !value.is_string()) {
            value = s.substr(eq + 1);
        }
        *node = std::move(value);
    }
    PipelineConfig cfg = pipeline_config_from_json(merged);
    if (overrides.seed) {
        apply_seed(cfg, *overrides.seed);
    }
    cfg.validate();
    return cfg;
}

fs::path resolve_workdir(const PipelineConfig& cfg)
{
    if (!cfg.workdir.empty()) {
        return cfg.workdir;
    }
    if (const char* env = std::getenv("SHEARS_WORKDIR"); env != nullptr && *env != '\0') {
        return env;
    }
    return "shears_work";
}

std::vector<std::string> expand_targets(const ModelConfig& model, const std::vector<std::string>& targets)
{
    if (targets.empty()) {
        throw ConfigError("target list is empty");
    }
    std::set<std::string> wanted;
    for (const auto& t : targets) {
        bool matched = false;
        for (std::size_t b = 0; b < model.n_blocks; ++b) {
            for (auto p : kAllProjections) {
                const std::string name = module_name(b, p);
                if (t == projection_name(p) || t == name) {
                    wanted.insert(name);
                    matched = true;
                }
            }
        }
        if (!matched) {
            throw ConfigError("unknown target module '" + t + "'");
        }
    }
    std::vector<std::string> out;
    for (std::size_t b = 0; b < model.n_blocks; ++b) {
        for (auto p : kAllProjections) {
            if (wanted.count(module_name(b, p)) != 0) {
                out.push_back(module_name(b, p));
            }
        }
    }
    return out;
}

WorkdirLock::WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock")
{
    fs::create_directories(workdir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
        throw ArtifactError("workdir " + workdir.string() + " is locked by another writer (" + path_.string() +
                            "); remove the lock if no shears process is running");
    }
    std::fclose(f);
}

WorkdirLock::~WorkdirLock()
{
    std::error_code ec;
    fs::remove(path_, ec);
}

json cmd_prune(const PipelineConfig& cfg)
{
    const Workdir wd = workdir_of(cfg);
    const WorkdirLock lock(wd.root);
    wd.create();
    return stage_prune(cfg, wd);
}

json cmd_train(const PipelineConfig& cfg, bool dense)
{
    const Workdir wd = workdir_of(cfg);
    const WorkdirLock lock(wd.root);
    wd.create();
    return stage_train(cfg, wd, dense);
}

json cmd_search(const PipelineConfig& cfg)
{
    const Workdir wd = workdir_of(cfg);
    const WorkdirLock lock(wd.root);
    wd.create();
    return stage_search(cfg, wd);
}

json cmd_eval(const PipelineConfig& cfg, const std::string& which)
{
    const Workdir wd = workdir_of(cfg);
    const WorkdirLock lock(wd.root);
    wd.create();
    return stage_eval(cfg, wd, which);
}

json cmd_bench(const PipelineConfig& cfg)
{
    const Workdir wd = workdir_of(cfg);
    const WorkdirLock lock(wd.root);
    wd.create();
    return stage_bench(cfg, wd);
}

json cmd_report(const PipelineConfig& cfg)
{
    const Workdir wd = workdir_of(cfg);
    const WorkdirLock lock(wd.root);
    wd.create();
    return stage_report(cfg, wd);
}

json cmd_pipeline(const PipelineConfig& cfg, bool dense)
{
    const Clock clock;
    const Workdir wd = workdir_of(cfg);
    const WorkdirLock lock(wd.root);
    wd.create();
    json out{{"config", to_json(cfg)}};
    if (!dense) {
        out["prune"] = stage_prune(cfg, wd);
    }
    out["train"] = stage_train(cfg, wd, dense);
    out["search"] = stage_search(cfg, wd);
    json evals = json::object();
    for (const char* which : {"base", "heuristic", "maximal", "minimal", "best"}) {
        evals[which] = stage_eval(cfg, wd, which);
    }
    out["eval"] = evals;
    out["report"] = stage_report(cfg, wd);
    out["bench"] = stage_bench(cfg, wd);
    out["seconds"] = clock.seconds();
    write_json(wd.reports() / "pipeline.json", out);
    return out;
}

int exit_code_for(const std::exception& e) noexcept
{
    if (dynamic_cast<const ConfigError*>(&e) != nullptr || dynamic_cast<const std::invalid_argument*>(&e) != nullptr) {
        return 2;
    }
    if (dynamic_cast<const ArtifactError*>(&e) != nullptr) {
        return 3;
    }
    if (dynamic_cast<const NumericError*>(&e) != nullptr) {
        return 4;
    }
    return 1;
}

} // namespace shears
