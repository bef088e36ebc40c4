// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shears/adapters.hpp"
#include "shears/data.hpp"
#include "shears/metrics.hpp"
#include "shears/model.hpp"
#include "shears/pruning.hpp"
#include "shears/search.hpp"

namespace shears {

inline constexpr const char* kModelFormat = "shears-model";
inline constexpr const char* kAdapterFormat = "shears-adapter";
inline constexpr int kCheckpointVersion = 1;

/// How a saved model was sparsified; absent for a dense model.
struct PruneInfo {
    std::optional<PruneMethod> method;
    double sparsity = 0.0;
    std::vector<std::string> targets;
};

struct LoadedModel {
    Model model;
    std::optional<PruneInfo> prune;
};

/// Directory with meta.json, embedding.shrt, head.shrt and modules/<name>.shrt.
void save_model(const Model& model, const std::filesystem::path& dir, const std::optional<PruneInfo>& prune = {});

/// Does not verify the recorded hash; `require_frozen` does that.
LoadedModel load_model(const std::filesystem::path& dir);

/// Directory with meta.json and <name>.A.shrt / <name>.B.shrt per module.
void save_adapter(const SuperAdapter& adapter, const std::filesystem::path& dir);
SuperAdapter load_adapter(const std::filesystem::path& dir);

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TaskSpec& t);
nlohmann::json to_json(const SubAdapterConfig& c);
nlohmann::json to_json(const PruneReport& r);
nlohmann::json to_json(const ParamReport& r);
nlohmann::json to_json(const BenchReport& r);
nlohmann::json to_json(const Objectives& o);

ModelConfig model_config_from_json(const nlohmann::json& j);
SubAdapterConfig sub_config_from_json(const nlohmann::json& j);

/// Pretty-printed JSON written in one piece; throws ArtifactError on I/O failure.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

} // namespace shears
