// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "shears/linalg.hpp"
#include "shears/model.hpp"
#include "shears/pruning.hpp"
#include "shears/rng.hpp"

namespace shears {

inline const std::vector<std::size_t> kDefaultRankChoices{32, 24, 16};
inline constexpr double kDefaultAlpha = 64.0;
inline constexpr double kAdapterInitStd = 0.02;

/// Which rank divides alpha when scaling the low-rank update.
enum class AdapterScaling { ActiveRank, MaxRank };

/// Elastic LoRA pair stored at maximal rank. Rank r activates the leading
/// r rows of `a` and the leading r columns of `b`.
struct AdapterModule {
    std::string name;
    DenseMatrix a;  // [r_max × in]
    DenseMatrix b;  // [out × r_max]
    std::vector<std::size_t> rank_choices;  // strictly descending, front() == r_max

    [[nodiscard]] std::size_t max_rank() const noexcept { return rank_choices.front(); }
    [[nodiscard]] bool allows(std::size_t rank) const noexcept;

    friend bool operator==(const AdapterModule&, const AdapterModule&) = default;
};

struct SuperAdapter {
    double alpha = kDefaultAlpha;
    AdapterScaling scaling = AdapterScaling::ActiveRank;
    bool trained = false;
    std::vector<AdapterModule> modules;

    [[nodiscard]] const AdapterModule& module(const std::string& name) const;
    AdapterModule& module(const std::string& name);
    [[nodiscard]] const AdapterModule* find(const std::string& name) const noexcept;
    [[nodiscard]] std::vector<std::string> module_names() const;

    [[nodiscard]] double scale(std::size_t active_rank, const AdapterModule& m) const noexcept;

    friend bool operator==(const SuperAdapter&, const SuperAdapter&) = default;
};

void validate_rank_choices(const std::vector<std::size_t>& choices);

SuperAdapter attach(const Model& model, const std::vector<std::string>& targets,
                    const std::vector<std::size_t>& rank_choices, double alpha, Rng& rng);

/// Throws std::invalid_argument unless `config` covers exactly the adapter's
/// modules with allowed ranks.
void validate_config(const SuperAdapter& adapter, const SubAdapterConfig& config);

/// Leading slices for an active rank.
DenseMatrix active_a(const AdapterModule& m, std::size_t rank);
DenseMatrix active_b(const AdapterModule& m, std::size_t rank);

/// scale · B[:, :r] · A[:r, :]
DenseMatrix delta(const SuperAdapter& adapter, const std::string& module, std::size_t rank);

SubAdapterConfig maximal_config(const SuperAdapter& adapter);
SubAdapterConfig minimal_config(const SuperAdapter& adapter);

/// Folds every active delta into a copy of the base weights. The copy is
/// no longer frozen and the report reflects its (lower) sparsity.
std::pair<Model, PruneReport> merge(const Model& model, const SuperAdapter& adapter,
                                    const SubAdapterConfig& config);

} // namespace shears
