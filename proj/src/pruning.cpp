// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "shears/adapters.hpp"

namespace shears {

const char* prune_method_name(PruneMethod m) noexcept
{
    return m == PruneMethod::Wanda ? "wanda" : "magnitude";
}

PruneMethod parse_prune_method(const std::string& name)
{
    if (name == "wanda") {
        return PruneMethod::Wanda;
    }
    if (name == "magnitude") {
        return PruneMethod::Magnitude;
    }
    throw std::invalid_argument("unknown prune method '" + name + "' (expected wanda or magnitude)");
}

DenseMatrix wanda_scores(const DenseMatrix& w, std::span<const float> norms)
{
    if (norms.size() != w.cols()) {
        throw std::invalid_argument("wanda_scores: " + std::to_string(norms.size()) + " norms for " +
                                    w.shape_string() + " weight");
    }
    for (std::size_t j = 0; j < norms.size(); ++j) {
        if (!(norms[j] >= 0.0f) || !std::isfinite(norms[j])) {
            throw std::invalid_argument("wanda_scores: norm " + std::to_string(j) + " is negative or not finite");
        }
    }
    DenseMatrix s(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const auto wr = w.row(i);
        auto sr = s.row(i);
        for (std::size_t j = 0; j < wr.size(); ++j) {
            sr[j] = std::fabs(wr[j]) * norms[j];
        }
    }
    return s;
}

std::size_t prune_count(double sparsity, std::size_t cols)
{
    if (!(sparsity >= 0.0 && sparsity < 1.0)) {
        throw std::invalid_argument("sparsity must lie in [0, 1), got " + std::to_string(sparsity));
    }
    return static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(cols)));
}

DenseMatrix prune_rows(const DenseMatrix& w, const DenseMatrix& scores, double sparsity)
{
    if (w.rows() != scores.rows() || w.cols() != scores.cols()) {
        throw std::invalid_argument("prune_rows: weight " + w.shape_string() + " vs scores " +
                                    scores.shape_string());
    }
    const std::size_t n_prune = prune_count(sparsity, w.cols());
    DenseMatrix out = w;
    if (n_prune == 0) {
        return out;
    }
    std::vector<std::uint32_t> order(w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const auto sr = scores.row(i);
        std::iota(order.begin(), order.end(), 0U);
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_prune - 1), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) {
                             return sr[a] < sr[b] || (sr[a] == sr[b] && a > b);
                         });
        auto orow = out.row(i);
        for (std::size_t p = 0; p < n_prune; ++p) {
            orow[order[p]] = 0.0f;
        }
    }
    return out;
}

std::vector<std::size_t> row_zero_counts(const DenseMatrix& w)
{
    std::vector<std::size_t> counts(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        counts[i] = w.cols() - count_nonzero(w.row(i));
    }
    return counts;
}

PruneReport scan_report(const Model& model, const std::vector<std::string>& targets, double requested,
                        std::optional<PruneMethod> method)
{
    PruneReport report;
    report.method = method;
    report.requested = requested;
    for (const auto& m : model.modules) {
        if (std::find(targets.begin(), targets.end(), m.name) == targets.end()) {
            continue;
        }
        ModulePruneStats st;
        st.name = m.name;
        st.rows = m.weight.rows();
        st.cols = m.weight.cols();
        st.requested = requested;
        st.nonzero = count_nonzero(m.weight.values());
        st.sparsity = static_cast<double>(m.weight.size() - st.nonzero) / static_cast<double>(m.weight.size());
        const auto zeros = row_zero_counts(m.weight);
        st.min_row_zeros = zeros.empty() ? 0 : *std::min_element(zeros.begin(), zeros.end());
        st.max_row_zeros = zeros.empty() ? 0 : *std::max_element(zeros.begin(), zeros.end());
        report.target_total += m.weight.size();
        report.target_nonzero += st.nonzero;
        report.modules.push_back(std::move(st));
    }
    if (report.target_total > 0) {
        report.target_sparsity =
            static_cast<double>(report.target_total - report.target_nonzero) / static_cast<double>(report.target_total);
    }
    return report;
}

PruneReport with_adapter(PruneReport report, const SuperAdapter& adapter, const SubAdapterConfig& config)
{
    validate_config(adapter, config);
    std::size_t params = 0;
    std::size_t nonzero = 0;
    for (const auto& [name, rank] : config) {
        const auto& m = adapter.module(name);
        const auto a = active_a(m, rank);
        const auto b = active_b(m, rank);
        params += a.size() + b.size();
        nonzero += count_nonzero(a.values()) + count_nonzero(b.values());
    }
    report.adapter_params = params;
    report.adapter_nonzero = nonzero;
    const std::size_t total = report.target_total + params;
    report.sparsity_with_adapter =
        static_cast<double>(total - report.target_nonzero - nonzero) / static_cast<double>(total);
    return report;
}

std::pair<Model, PruneReport> sparsify_model(const Model& model, const std::vector<Batch>& calib,
                                             const std::vector<std::string>& targets,
                                             double sparsity, PruneMethod method)
{
    if (targets.empty()) {
        throw std::invalid_argument("sparsify_model: no target modules");
    }
    for (const auto& t : targets) {
        if (!model.has_module(t)) {
            throw std::invalid_argument("sparsify_model: unknown target module '" + t + "'");
        }
    }
    (void)prune_count(sparsity, 1);
    std::map<std::string, std::vector<float>> norms;
    if (method == PruneMethod::Wanda) {
        if (calib.empty()) {
            throw std::invalid_argument("sparsify_model: Wanda needs a non-empty calibration set");
        }
        norms = capture_activations(model, calib, targets);
    }
    Model pruned = model;
    for (const auto& t : targets) {
        auto& w = pruned.module(t).weight;
        std::vector<float> n = method == PruneMethod::Wanda ? norms.at(t) : std::vector<float>(w.cols(), 1.0f);
        w = prune_rows(w, wanda_scores(w, n), sparsity);
    }
    freeze(pruned);
    auto report = scan_report(pruned, targets, sparsity, method);
    return {std::move(pruned), std::move(report)};
}

} // namespace shears
