// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shears/adapters.hpp"
#include "shears/data.hpp"
#include "shears/model.hpp"
#include "shears/nls.hpp"
#include "shears/pruning.hpp"
#include "shears/search.hpp"

namespace shears {

struct PruneSettings {
    PruneMethod method = PruneMethod::Wanda;
    double sparsity = 0.5;
    /// Projection kinds ("q", "up", ...) apply to every block; "b0.q" style names pick one module.
    std::vector<std::string> targets{"q", "k", "v", "o", "up", "gate", "down"};
    std::size_t calib_size = 32;
};

struct AdapterSettings {
    std::vector<std::string> targets{"q", "k", "v", "up", "down"};
    std::vector<std::size_t> rank_choices = kDefaultRankChoices;
    double alpha = kDefaultAlpha;
    AdapterScaling scaling = AdapterScaling::ActiveRank;
};

enum class SearchStrategy { Heuristic, HillClimb, Evolutionary };

struct SearchSettings {
    SearchStrategy strategy = SearchStrategy::HillClimb;
    std::size_t budget = 50;
    std::size_t pop_size = 16;
    std::size_t generations = 10;
    /// Reference-point survival; with no explicit points one is derived
    /// from the best metric seen so far and the minimal parameter count.
    bool reference_survival = false;
    std::vector<ReferencePoint> reference_points;
    std::uint64_t seed = 0;
};

struct PipelineConfig {
    ModelConfig model;
    TaskSpec task;
    PruneSettings prune;
    AdapterSettings adapter;
    TrainConfig train;
    SearchSettings search;
    /// Empty means SHEARS_WORKDIR, then "shears_work".
    std::filesystem::path workdir;

    /// Cross-field checks; throws ConfigError naming the field.
    void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);

/// Strict: unknown keys and ill-typed values are ConfigErrors.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

struct ConfigOverrides {
    /// "dotted.path=value"; value parsed as JSON, else taken as a string.
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

/// Defaults, then the file (if any), then --set, then --seed.
PipelineConfig load_pipeline_config(const std::optional<std::filesystem::path>& path,
                                    const ConfigOverrides& overrides = {});

/// --seed: one value for model init, training and search.
void apply_seed(PipelineConfig& cfg, std::uint64_t seed);

std::filesystem::path resolve_workdir(const PipelineConfig& cfg);

std::vector<std::string> expand_targets(const ModelConfig& model, const std::vector<std::string>& targets);

/// Exclusive writer lock on a workdir, released on destruction.
class WorkdirLock {
public:
    explicit WorkdirLock(const std::filesystem::path& workdir);
    ~WorkdirLock();
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

private:
    std::filesystem::path path_;
};

/// Each command writes only under the workdir and returns its summary.
nlohmann::json cmd_prune(const PipelineConfig& cfg);
/// `dense` trains on a freshly initialized, unpruned, frozen model.
nlohmann::json cmd_train(const PipelineConfig& cfg, bool dense = false);
nlohmann::json cmd_search(const PipelineConfig& cfg);
/// `which`: base, heuristic, maximal, minimal, best, or a path to a JSON config.
nlohmann::json cmd_eval(const PipelineConfig& cfg, const std::string& which);
nlohmann::json cmd_bench(const PipelineConfig& cfg);
nlohmann::json cmd_report(const PipelineConfig& cfg);
nlohmann::json cmd_pipeline(const PipelineConfig& cfg, bool dense = false);

/// Process exit status for an exception escaping a command.
int exit_code_for(const std::exception& e) noexcept;

} // namespace shears
