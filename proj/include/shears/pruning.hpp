// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shears/linalg.hpp"
#include "shears/model.hpp"

namespace shears {

struct SuperAdapter;

enum class PruneMethod { Wanda, Magnitude };

const char* prune_method_name(PruneMethod m) noexcept;
PruneMethod parse_prune_method(const std::string& name);

struct ModulePruneStats {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    double requested = 0.0;
    std::size_t nonzero = 0;
    double sparsity = 0.0;
    /// Fewest / most exact zeros found in any single row.
    std::size_t min_row_zeros = 0;
    std::size_t max_row_zeros = 0;
};

/// Sparsity accounting over the target modules, always from a direct scan.
struct PruneReport {
    std::optional<PruneMethod> method;
    double requested = 0.0;
    std::vector<ModulePruneStats> modules;
    std::size_t target_total = 0;
    std::size_t target_nonzero = 0;
    double target_sparsity = 0.0;

    /// Filled by `with_adapter`: the active adapter slices join the
    /// denominator and their non-zeros join the numerator.
    std::optional<std::size_t> adapter_params;
    std::optional<std::size_t> adapter_nonzero;
    std::optional<double> sparsity_with_adapter;
};

/// |W| scaled per input column by the activation norm.
DenseMatrix wanda_scores(const DenseMatrix& w, std::span<const float> norms);

/// Number of entries zeroed in a row of `cols` entries at sparsity `s`.
std::size_t prune_count(double sparsity, std::size_t cols);

/// Zeroes the prune_count(s, cols) lowest-scoring entries of every row.
/// Among equal scores the larger column index goes first.
DenseMatrix prune_rows(const DenseMatrix& w, const DenseMatrix& scores, double sparsity);

PruneReport scan_report(const Model& model, const std::vector<std::string>& targets, double requested,
                        std::optional<PruneMethod> method = std::nullopt);

PruneReport with_adapter(PruneReport report, const SuperAdapter& adapter,
                         const SubAdapterConfig& config);

/// Prunes every target module, then freezes the model. Wanda uses one
/// calibration pass over `calib`; Magnitude ignores it.
std::pair<Model, PruneReport> sparsify_model(const Model& model, const std::vector<Batch>& calib,
                                             const std::vector<std::string>& targets,
                                             double sparsity, PruneMethod method);

/// Exact-zero count of every row of a matrix.
std::vector<std::size_t> row_zero_counts(const DenseMatrix& w);

} // namespace shears
