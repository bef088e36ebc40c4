// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shears/model.hpp"
#include "shears/rng.hpp"

namespace shears {

struct SuperAdapter;

/// Per-module rank lists, each ordered descending from the maximal rank.
class SearchSpace {
public:
    SearchSpace() = default;
    explicit SearchSpace(std::vector<std::pair<std::string, std::vector<std::size_t>>> modules);

    static SearchSpace from_adapter(const SuperAdapter& adapter);

    [[nodiscard]] const std::vector<std::pair<std::string, std::vector<std::size_t>>>& modules() const noexcept
    {
        return modules_;
    }
    [[nodiscard]] std::size_t module_count() const noexcept { return modules_.size(); }
    /// Π of per-module choice counts (saturates at SIZE_MAX).
    [[nodiscard]] std::size_t size() const noexcept;
    [[nodiscard]] bool contains(const SubAdapterConfig& config) const;
    /// Position of `rank` within a module's list.
    [[nodiscard]] std::size_t index_of(std::size_t module, std::size_t rank) const;

    /// Every configuration, first module varying slowest.
    [[nodiscard]] std::vector<SubAdapterConfig> enumerate() const;

private:
    std::vector<std::pair<std::string, std::vector<std::size_t>>> modules_;
};

struct Objectives {
    double metric = 0.0;      // maximized
    std::size_t params = 0;   // minimized

    friend bool operator==(const Objectives&, const Objectives&) = default;
};

struct Candidate {
    SubAdapterConfig config;
    std::optional<Objectives> objectives;

    [[nodiscard]] bool evaluated() const noexcept { return objectives.has_value(); }
};

/// "b0.q=24;b0.k=16;..." in map order.
std::string fingerprint(const SubAdapterConfig& config);

using Evaluator = std::function<Objectives(const SubAdapterConfig&)>;

/// Memoizes an evaluator by fingerprint and counts real invocations.
class EvalCache {
public:
    explicit EvalCache(Evaluator evaluator);

    Objectives operator()(const SubAdapterConfig& config);
    [[nodiscard]] bool contains(const SubAdapterConfig& config) const;
    [[nodiscard]] std::size_t invocations() const noexcept { return invocations_; }
    [[nodiscard]] const std::map<std::string, std::pair<SubAdapterConfig, Objectives>>& entries() const noexcept
    {
        return entries_;
    }

private:
    Evaluator evaluator_;
    std::map<std::string, std::pair<SubAdapterConfig, Objectives>> entries_;
    std::size_t invocations_ = 0;
};

/// Index ⌊n/2⌋ of every module's descending list.
SubAdapterConfig heuristic_config(const SearchSpace& space);

/// Configs one step away in exactly one module; module order, lower rank before higher.
std::vector<SubAdapterConfig> neighbors(const SubAdapterConfig& config, const SearchSpace& space);

struct HillClimbResult {
    SubAdapterConfig best;
    Objectives best_objectives;
    /// Accepted configurations, starting with the start point.
    std::vector<Candidate> trace;
    std::size_t evaluations = 0;
};

/// Steepest ascent on the metric with strict improvement; `budget` caps evaluator calls.
HillClimbResult hill_climb(EvalCache& cache, const SubAdapterConfig& start, const SearchSpace& space,
                           std::size_t budget);

/// Pareto fronts (maximize metric, minimize params) as candidate indices.
std::vector<std::vector<std::size_t>> nondominated_sort(const std::vector<Candidate>& candidates);

bool dominates(const Objectives& a, const Objectives& b) noexcept;

/// Crowding distance within one front; boundary points get +inf.
std::vector<double> crowding_distance(const std::vector<Objectives>& front);

struct ReferencePoint {
    double metric = 0.0;
    double params = 0.0;
};

struct EvolutionOptions {
    std::size_t pop_size = 16;
    std::size_t generations = 10;
    /// Non-empty selects reference-point survival in place of crowding.
    std::vector<ReferencePoint> reference_points;
};

struct EvolutionResult {
    /// Non-dominated members of the final population, distinct configs, fingerprint order.
    std::vector<Candidate> front;
    Candidate best;
    std::vector<Candidate> final_population;
    /// Fingerprints of each generation's population, in population order.
    std::vector<std::vector<std::string>> history;
    std::size_t evaluations = 0;
};

EvolutionResult evolutionary_search(EvalCache& cache, const SearchSpace& space, const EvolutionOptions& options,
                                    Rng& rng);

} // namespace shears
