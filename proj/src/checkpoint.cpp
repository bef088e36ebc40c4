// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/checkpoint.hpp"

#include <fstream>

#include "shears/error.hpp"
#include "shears/tensor_io.hpp"

namespace shears {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_meta(const fs::path& dir, const char* format)
{
    const fs::path meta = dir / "meta.json";
    if (!fs::exists(meta)) {
        throw ArtifactError("missing checkpoint metadata " + meta.string());
    }
    json j = read_json(meta);
    if (!j.is_object() || j.value("format", "") != format) {
        throw ArtifactError(meta.string() + ": expected format '" + format + "'");
    }
    if (j.value("version", 0) != kCheckpointVersion) {
        throw ArtifactError(meta.string() + ": unsupported checkpoint version");
    }
    return j;
}

DenseMatrix load_shaped(const fs::path& path, std::size_t rows, std::size_t cols)
{
    if (!fs::exists(path)) {
        throw ArtifactError("missing tensor " + path.string());
    }
    DenseMatrix m = load_tensor(path);
    if (m.rows() != rows || m.cols() != cols) {
        throw ArtifactError(path.string() + ": shape " + m.shape_string() + ", expected [" + std::to_string(rows) +
                            "x" + std::to_string(cols) + "]");
    }
    return m;
}

template <typename T>
T field(const json& j, const char* key, const std::string& where)
{
    if (!j.contains(key)) {
        throw ArtifactError(where + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ArtifactError(where + ": bad field '" + key + "': " + e.what());
    }
}

const char* scaling_name(AdapterScaling s)
{
    return s == AdapterScaling::ActiveRank ? "active_rank" : "max_rank";
}

} // namespace

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw ArtifactError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw ArtifactError("write failed for " + path.string());
    }
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ArtifactError("cannot read " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ArtifactError(path.string() + ": " + e.what());
    }
}

json to_json(const ModelConfig& c)
{
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"n_blocks", c.n_blocks},
            {"d_ff", c.d_ff},             {"n_classes", c.n_classes}, {"seq_len", c.seq_len},
            {"seed", c.seed},             {"position_scale", c.position_scale}};
}

ModelConfig model_config_from_json(const json& j)
{
    const std::string where = "model config";
    ModelConfig c;
    c.vocab_size = field<std::size_t>(j, "vocab_size", where);
    c.d_model = field<std::size_t>(j, "d_model", where);
    c.n_blocks = field<std::size_t>(j, "n_blocks", where);
    c.d_ff = field<std::size_t>(j, "d_ff", where);
    c.n_classes = field<std::size_t>(j, "n_classes", where);
    c.seq_len = field<std::size_t>(j, "seq_len", where);
    c.seed = field<std::uint64_t>(j, "seed", where);
    c.position_scale = field<float>(j, "position_scale", where);
    return c;
}

json to_json(const TaskSpec& t)
{
    return {{"kind", task_kind_name(t.kind)}, {"n_train", t.n_train},       {"n_val", t.n_val},
            {"n_test", t.n_test},             {"seq_len", t.seq_len},       {"vocab_size", t.vocab_size},
            {"n_classes", t.n_classes},       {"seed", t.seed}};
}

json to_json(const SubAdapterConfig& c)
{
    json j = json::object();
    for (const auto& [name, rank] : c) {
        j[name] = rank;
    }
    return j;
}

SubAdapterConfig sub_config_from_json(const json& j)
{
    if (!j.is_object()) {
        throw std::invalid_argument("sub-adapter config must be an object of module -> rank");
    }
    SubAdapterConfig c;
    for (const auto& [name, rank] : j.items()) {
        if (!rank.is_number_unsigned()) {
            throw std::invalid_argument("sub-adapter config: rank for '" + name + "' must be a non-negative integer");
        }
        c[name] = rank.get<std::size_t>();
    }
    return c;
}

json to_json(const PruneReport& r)
{
    json modules = json::array();
    for (const auto& m : r.modules) {
        modules.push_back({{"name", m.name},
                           {"rows", m.rows},
                           {"cols", m.cols},
                           {"requested", m.requested},
                           {"nonzero", m.nonzero},
                           {"sparsity", m.sparsity},
                           {"min_row_zeros", m.min_row_zeros},
                           {"max_row_zeros", m.max_row_zeros}});
    }
    json j{{"method", r.method ? json(prune_method_name(*r.method)) : json(nullptr)},
           {"requested", r.requested},
           {"target_total", r.target_total},
           {"target_nonzero", r.target_nonzero},
           {"target_sparsity", r.target_sparsity},
           {"modules", modules}};
    if (r.sparsity_with_adapter) {
        j["adapter_params"] = *r.adapter_params;
        j["adapter_nonzero"] = *r.adapter_nonzero;
        j["sparsity_with_adapter"] = *r.sparsity_with_adapter;
    }
    return j;
}

json to_json(const ParamReport& r)
{
    json j{{"base_total", r.base_total},
           {"base_nonzero", r.base_nonzero},
           {"base_sparsity", r.base_sparsity()},
           {"target_total", r.target_total},
           {"target_nonzero", r.target_nonzero},
           {"target_sparsity", r.target_sparsity()},
           {"adapter_active_params", r.adapter_active_params},
           {"adapter_nonzero", r.adapter_nonzero},
           {"global_total", r.global_total},
           {"global_nonzero", r.global_nonzero},
           {"global_sparsity", r.global_sparsity()},
           {"nonzero_reduction", r.nonzero_reduction()}};
    if (r.merged_nonzero) {
        j["merged_nonzero"] = *r.merged_nonzero;
        j["merged_sparsity"] = *r.merged_sparsity;
        j["merged_target_sparsity"] = *r.merged_target_sparsity;
    }
    return j;
}

json to_json(const BenchReport& r)
{
    json entries = json::array();
    for (const auto& e : r.entries) {
        entries.push_back({{"batch_size", e.batch_size},
                           {"dense_median_ms", e.dense_median_ms},
                           {"csr_median_ms", e.csr_median_ms},
                           {"speedup", e.speedup()},
                           {"max_abs_diff", e.max_abs_diff}});
    }
    return {{"target_sparsity", r.target_sparsity}, {"repetitions", r.repetitions}, {"entries", entries}};
}

json to_json(const Objectives& o)
{
    return {{"metric", o.metric}, {"params", o.params}};
}

void save_model(const Model& model, const fs::path& dir, const std::optional<PruneInfo>& prune)
{
    fs::create_directories(dir / "modules");
    save_tensor(dir / "embedding.shrt", model.embedding);
    save_tensor(dir / "head.shrt", model.head);
    for (const auto& m : model.modules) {
        save_tensor(dir / "modules" / (m.name + ".shrt"), m.weight);
    }
    json meta{{"format", kModelFormat},
              {"version", kCheckpointVersion},
              {"config", to_json(model.config)},
              {"modules", model.module_names()},
              {"frozen_hash", model.frozen_hash ? json(*model.frozen_hash) : json(nullptr)}};
    if (prune) {
        meta["prune"] = {{"method", prune->method ? json(prune_method_name(*prune->method)) : json(nullptr)},
                         {"sparsity", prune->sparsity},
                         {"targets", prune->targets}};
    } else {
        meta["prune"] = nullptr;
    }
    // Metadata last: a directory without it is an incomplete write.
    write_json(dir / "meta.json", meta);
}

LoadedModel load_model(const fs::path& dir)
{
    const json meta = read_meta(dir, kModelFormat);
    const std::string where = (dir / "meta.json").string();
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(meta.at("config"));
        cfg.validate();
    } catch (const ArtifactError&) {
        throw;
    } catch (const std::exception& e) {
        throw ArtifactError(where + ": bad config: " + e.what());
    }

    LoadedModel out;
    Model& model = out.model;
    model.config = cfg;
    model.embedding = load_shaped(dir / "embedding.shrt", cfg.vocab_size, cfg.d_model);
    model.head = load_shaped(dir / "head.shrt", cfg.d_model, cfg.n_classes);

    const auto names = field<std::vector<std::string>>(meta, "modules", where);
    std::vector<std::string> expected;
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        for (auto p : kAllProjections) {
            expected.push_back(module_name(b, p));
        }
    }
    if (names != expected) {
        throw ArtifactError(where + ": module list does not match the configured architecture");
    }
    for (const auto& name : names) {
        const auto dot = name.find('.');
        const std::string proj = name.substr(dot + 1);
        std::size_t rows = cfg.d_model;
        std::size_t cols = cfg.d_model;
        if (proj == "up" || proj == "gate") {
            rows = cfg.d_ff;
        } else if (proj == "down") {
            cols = cfg.d_ff;
        }
        model.modules.push_back({name, load_shaped(dir / "modules" / (name + ".shrt"), rows, cols)});
    }
    if (meta.contains("frozen_hash") && !meta["frozen_hash"].is_null()) {
        model.frozen_hash = field<std::string>(meta, "frozen_hash", where);
    }
    if (meta.contains("prune") && !meta["prune"].is_null()) {
        const json& p = meta["prune"];
        PruneInfo info;
        if (p.contains("method") && !p["method"].is_null()) {
            try {
                info.method = parse_prune_method(p["method"].get<std::string>());
            } catch (const std::exception& e) {
                throw ArtifactError(where + ": " + e.what());
            }
        }
        info.sparsity = field<double>(p, "sparsity", where);
        info.targets = field<std::vector<std::string>>(p, "targets", where);
        out.prune = std::move(info);
    }
    return out;
}

void save_adapter(const SuperAdapter& adapter, const fs::path& dir)
{
    fs::create_directories(dir);
    json choices = json::object();
    for (const auto& m : adapter.modules) {
        save_tensor(dir / (m.name + ".A.shrt"), m.a);
        save_tensor(dir / (m.name + ".B.shrt"), m.b);
        choices[m.name] = m.rank_choices;
    }
    const json meta{{"format", kAdapterFormat},
                    {"version", kCheckpointVersion},
                    {"alpha", adapter.alpha},
                    {"scaling", scaling_name(adapter.scaling)},
                    {"trained", adapter.trained},
                    {"targets", adapter.module_names()},
                    {"rank_choices", choices}};
    write_json(dir / "meta.json", meta);
}

SuperAdapter load_adapter(const fs::path& dir)
{
    const json meta = read_meta(dir, kAdapterFormat);
    const std::string where = (dir / "meta.json").string();
    SuperAdapter adapter;
    adapter.alpha = field<double>(meta, "alpha", where);
    const auto scaling = field<std::string>(meta, "scaling", where);
    if (scaling == "active_rank") {
        adapter.scaling = AdapterScaling::ActiveRank;
    } else if (scaling == "max_rank") {
        adapter.scaling = AdapterScaling::MaxRank;
    } else {
        throw ArtifactError(where + ": unknown scaling '" + scaling + "'");
    }
    adapter.trained = field<bool>(meta, "trained", where);
    const auto targets = field<std::vector<std::string>>(meta, "targets", where);
    const json choices = meta.value("rank_choices", json::object());
    for (const auto& name : targets) {
        AdapterModule m;
        m.name = name;
        if (!choices.contains(name)) {
            throw ArtifactError(where + ": no rank_choices for '" + name + "'");
        }
        m.rank_choices = field<std::vector<std::size_t>>(choices, name.c_str(), where);
        try {
            validate_rank_choices(m.rank_choices);
        } catch (const std::invalid_argument& e) {
            throw ArtifactError(where + ": " + e.what());
        }
        const fs::path a_path = dir / (name + ".A.shrt");
        const fs::path b_path = dir / (name + ".B.shrt");
        if (!fs::exists(a_path) || !fs::exists(b_path)) {
            throw ArtifactError("missing adapter tensors for '" + name + "' in " + dir.string());
        }
        m.a = load_tensor(a_path);
        m.b = load_tensor(b_path);
        if (m.a.rows() != m.max_rank() || m.b.cols() != m.max_rank()) {
            throw ArtifactError(dir.string() + ": adapter '" + name + "' tensors do not match rank " +
                                std::to_string(m.max_rank()));
        }
        adapter.modules.push_back(std::move(m));
    }
    return adapter;
}

} // namespace shears
