// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "shears/error.hpp"
#include "shears/pruning.hpp"
#include "shears/sparse_forward.hpp"

namespace shears {

namespace {

struct Tally {
    std::size_t total = 0;
    std::size_t nonzero = 0;
    std::size_t target_total = 0;
    std::size_t target_nonzero = 0;
};

Tally scan(const Model& model)
{
    Tally t;
    auto add = [&](const DenseMatrix& m, bool target) {
        const auto nz = count_nonzero(m.values());
        t.total += m.size();
        t.nonzero += nz;
        if (target) {
            t.target_total += m.size();
            t.target_nonzero += nz;
        }
    };
    add(model.embedding, false);
    for (const auto& m : model.modules) {
        add(m.weight, true);
    }
    add(model.head, false);
    return t;
}

double sparsity_of(std::size_t nonzero, std::size_t total)
{
    return total == 0 ? 0.0 : static_cast<double>(total - nonzero) / static_cast<double>(total);
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

double ParamReport::base_sparsity() const noexcept
{
    return sparsity_of(base_nonzero, base_total);
}

double ParamReport::target_sparsity() const noexcept
{
    return sparsity_of(target_nonzero, target_total);
}

double ParamReport::global_sparsity() const noexcept
{
    return sparsity_of(global_nonzero, global_total);
}

double ParamReport::nonzero_reduction() const noexcept
{
    return base_nonzero == 0 ? 0.0 : static_cast<double>(base_total) / static_cast<double>(base_nonzero);
}

ParamReport count_params(const Model& model, const SuperAdapter* adapter, const SubAdapterConfig* config,
                         bool merged)
{
    if ((adapter == nullptr) != (config == nullptr)) {
        throw std::invalid_argument("count_params: adapter and config must be given together");
    }
    if (merged && adapter == nullptr) {
        throw std::invalid_argument("count_params: merged accounting needs an adapter and config");
    }
    const Tally base = scan(model);
    ParamReport r;
    r.base_total = base.total;
    r.base_nonzero = base.nonzero;
    r.target_total = base.target_total;
    r.target_nonzero = base.target_nonzero;
    if (adapter != nullptr) {
        validate_config(*adapter, *config);
        for (const auto& [name, rank] : *config) {
            const auto& m = adapter->module(name);
            const auto a = active_a(m, rank);
            const auto b = active_b(m, rank);
            r.adapter_active_params += a.size() + b.size();
            r.adapter_nonzero += count_nonzero(a.values()) + count_nonzero(b.values());
        }
    }
    r.global_total = r.base_total + r.adapter_active_params;
    r.global_nonzero = r.base_nonzero + r.adapter_nonzero;
    if (merged) {
        const auto [folded, report] = merge(model, *adapter, *config);
        const Tally m = scan(folded);
        r.merged_nonzero = m.nonzero;
        r.merged_sparsity = sparsity_of(m.nonzero, m.total);
        r.merged_target_sparsity = sparsity_of(m.target_nonzero, m.target_total);
    }
    return r;
}

BenchReport bench_inference(const Model& model, const SuperAdapter* adapter, const SubAdapterConfig* config,
                            const std::vector<std::size_t>& batch_sizes, std::size_t repetitions,
                            std::uint64_t seed)
{
    if (repetitions < 3) {
        throw std::invalid_argument("bench_inference: repetitions must be >= 3");
    }
    if ((adapter == nullptr) != (config == nullptr)) {
        throw std::invalid_argument("bench_inference: adapter and config must be given together");
    }
    const AdapterView view{adapter, config};
    const SparseWeights sparse = build_sparse_weights(model);
    BenchReport report;
    report.repetitions = repetitions;
    report.target_sparsity = scan_report(model, model.module_names(), 0.0).target_sparsity;

    Rng rng(seed);
    using clock = std::chrono::steady_clock;
    for (const auto bs : batch_sizes) {
        Batch batch;
        batch.seq_len = model.config.seq_len;
        for (std::size_t i = 0; i < bs * batch.seq_len; ++i) {
            batch.tokens.push_back(static_cast<std::uint32_t>(rng.uniform_index(model.config.vocab_size)));
        }
        batch.labels.assign(bs, 0);

        DenseMatrix dense_out = forward(model, batch, view);
        DenseMatrix csr_out = forward_sparse(model, sparse, batch, view);
        std::vector<double> dense_ms;
        std::vector<double> csr_ms;
        // Interleaved so drift in machine load hits both paths alike.
        for (std::size_t r = 0; r < repetitions; ++r) {
            auto t0 = clock::now();
            dense_out = forward(model, batch, view);
            auto t1 = clock::now();
            csr_out = forward_sparse(model, sparse, batch, view);
            auto t2 = clock::now();
            dense_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            csr_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
        }
        double diff = 0.0;
        for (std::size_t i = 0; i < dense_out.size(); ++i) {
            diff = std::max(diff, std::fabs(static_cast<double>(dense_out.values()[i]) - csr_out.values()[i]));
        }
        if (diff > 1e-4) {
            throw NumericError("bench_inference: dense and CSR paths disagree by " + std::to_string(diff));
        }
        report.entries.push_back({bs, median(dense_ms), median(csr_ms), diff});
    }
    return report;
}

} // namespace shears
