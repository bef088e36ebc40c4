// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "shears/adapters.hpp"
#include "shears/model.hpp"
#include "shears/rng.hpp"

namespace shears {

enum class OptimizerKind { Adam, Sgd };

/// NLS samples a sub-adapter per step; FixedLoRA trains one rank throughout.
enum class TrainMode { Nls, FixedLora };

/// Constant, or linear decay to zero over the whole run.
enum class LrSchedule { Constant, Linear };

struct TrainConfig {
    std::size_t epochs = 3;
    std::size_t batch_size = 16;
    double learning_rate = 3e-4;
    LrSchedule schedule = LrSchedule::Constant;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Global L2 clip on the active-slice gradient; 0 disables.
    double grad_clip = 0.0;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::Nls;
    /// Rank used in FixedLoRA mode; 0 means each module's maximal rank.
    std::size_t fixed_rank = 0;

    void validate() const;
};

struct StepRecord {
    std::size_t step = 0;
    SubAdapterConfig config;
    double loss = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;

    /// One JSON object per line, steps and epoch summaries interleaved in run order.
    void write_jsonl(const std::filesystem::path& path) const;
};

/// Each module's rank drawn independently and uniformly from its choices.
SubAdapterConfig sample_config(const SuperAdapter& adapter, Rng& rng);

/// Adam moments kept at maximal-rank shape; a step touches only the active
/// slice. Step counts are per rank component, so bias correction follows
/// how often each component was actually trained.
class AdapterOptimizer {
public:
    AdapterOptimizer(const SuperAdapter& adapter, const TrainConfig& cfg);

    void step(SuperAdapter& adapter, const SubAdapterConfig& active, const AdapterGradients& grads);
    void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

    struct ModuleState {
        DenseMatrix m_a, v_a, m_b, v_b;
        std::vector<std::uint64_t> steps;  // per rank component
    };
    [[nodiscard]] const ModuleState& state(const std::string& module) const { return states_.at(module); }

private:
    TrainConfig cfg_;
    std::map<std::string, ModuleState> states_;
};

/// Mean loss and accuracy of `batch` under a sub-adapter, evaluated in chunks.
std::pair<double, double> evaluate(const Model& model, const Batch& batch, AdapterView view,
                                   std::size_t chunk = 512);

struct TrainResult {
    SuperAdapter adapter;
    TrainLog log;
};

/// Trains only adapter slices on a frozen model; the base is re-hashed after
/// the run and any change is reported as an error.
TrainResult train(const Model& model, SuperAdapter adapter, const Batch& train_data, const Batch& val_data,
                  const TrainConfig& cfg);

} // namespace shears
