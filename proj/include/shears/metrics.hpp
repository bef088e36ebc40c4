// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "shears/adapters.hpp"
#include "shears/model.hpp"

namespace shears {

/// Parameter accounting by direct scan of every tensor.
struct ParamReport {
    std::size_t base_total = 0;
    std::size_t base_nonzero = 0;
    std::size_t target_total = 0;
    std::size_t target_nonzero = 0;
    std::size_t adapter_active_params = 0;
    std::size_t adapter_nonzero = 0;

    /// Unmerged view: base plus the active adapter slices.
    std::size_t global_total = 0;
    std::size_t global_nonzero = 0;

    /// Present when requested with merged = true.
    std::optional<std::size_t> merged_nonzero;
    std::optional<double> merged_sparsity;
    std::optional<double> merged_target_sparsity;

    [[nodiscard]] double base_sparsity() const noexcept;
    [[nodiscard]] double target_sparsity() const noexcept;
    [[nodiscard]] double global_sparsity() const noexcept;
    /// base_total / base_nonzero, the "× fewer non-zero parameters" figure.
    [[nodiscard]] double nonzero_reduction() const noexcept;
};

/// `adapter` and `config` must be given together; `merged` needs both.
ParamReport count_params(const Model& model, const SuperAdapter* adapter = nullptr,
                         const SubAdapterConfig* config = nullptr, bool merged = false);

struct BenchEntry {
    std::size_t batch_size = 0;
    double dense_median_ms = 0.0;
    double csr_median_ms = 0.0;
    double max_abs_diff = 0.0;

    [[nodiscard]] double speedup() const noexcept { return dense_median_ms / csr_median_ms; }
};

struct BenchReport {
    double target_sparsity = 0.0;
    std::size_t repetitions = 0;
    std::vector<BenchEntry> entries;
};

/// Median wall-clock of the dense and CSR forward paths (adapters unmerged)
/// on random token batches. Throws if the two paths disagree beyond 1e-4.
BenchReport bench_inference(const Model& model, const SuperAdapter* adapter, const SubAdapterConfig* config,
                            const std::vector<std::size_t>& batch_sizes, std::size_t repetitions = 5,
                            std::uint64_t seed = 0);

} // namespace shears
