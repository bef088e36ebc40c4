// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/adapters.hpp"

#include <algorithm>
#include <stdexcept>

namespace shears {

bool AdapterModule::allows(std::size_t rank) const noexcept
{
    return std::find(rank_choices.begin(), rank_choices.end(), rank) != rank_choices.end();
}

const AdapterModule* SuperAdapter::find(const std::string& name) const noexcept
{
    for (const auto& m : modules) {
        if (m.name == name) {
            return &m;
        }
    }
    return nullptr;
}

const AdapterModule& SuperAdapter::module(const std::string& name) const
{
    if (const auto* m = find(name)) {
        return *m;
    }
    throw std::invalid_argument("no adapter attached to module '" + name + "'");
}

AdapterModule& SuperAdapter::module(const std::string& name)
{
    return const_cast<AdapterModule&>(std::as_const(*this).module(name));
}

std::vector<std::string> SuperAdapter::module_names() const
{
    std::vector<std::string> names;
    names.reserve(modules.size());
    for (const auto& m : modules) {
        names.push_back(m.name);
    }
    return names;
}

double SuperAdapter::scale(std::size_t active_rank, const AdapterModule& m) const noexcept
{
    const auto r = scaling == AdapterScaling::ActiveRank ? active_rank : m.max_rank();
    return alpha / static_cast<double>(r);
}

void validate_rank_choices(const std::vector<std::size_t>& choices)
{
    if (choices.empty()) {
        throw std::invalid_argument("rank choices must not be empty");
    }
    for (std::size_t i = 0; i < choices.size(); ++i) {
        if (choices[i] < 1) {
            throw std::invalid_argument("rank choices must be >= 1");
        }
        if (i > 0 && choices[i] >= choices[i - 1]) {
            throw std::invalid_argument("rank choices must be strictly descending");
        }
    }
}

SuperAdapter attach(const Model& model, const std::vector<std::string>& targets,
                    const std::vector<std::size_t>& rank_choices, double alpha, Rng& rng)
{
    validate_rank_choices(rank_choices);
    if (targets.empty()) {
        throw std::invalid_argument("attach: no target modules");
    }
    for (const auto& t : targets) {
        if (!model.has_module(t)) {
            throw std::invalid_argument("attach: unknown target module '" + t + "'");
        }
    }
    SuperAdapter adapter;
    adapter.alpha = alpha;
    // Model order, so the result does not depend on how targets were listed.
    for (const auto& m : model.modules) {
        if (std::find(targets.begin(), targets.end(), m.name) == targets.end()) {
            continue;
        }
        const std::size_t r = rank_choices.front();
        AdapterModule am;
        am.name = m.name;
        am.a = DenseMatrix::gaussian(r, m.in_features(), kAdapterInitStd, rng);
        am.b = DenseMatrix(m.out_features(), r, 0.0f);
        am.rank_choices = rank_choices;
        adapter.modules.push_back(std::move(am));
    }
    return adapter;
}

void validate_config(const SuperAdapter& adapter, const SubAdapterConfig& config)
{
    if (config.size() != adapter.modules.size()) {
        throw std::invalid_argument("sub-adapter config covers " + std::to_string(config.size()) +
                                    " modules, adapter has " + std::to_string(adapter.modules.size()));
    }
    for (const auto& [name, rank] : config) {
        const auto* m = adapter.find(name);
        if (m == nullptr) {
            throw std::invalid_argument("sub-adapter config names unknown module '" + name + "'");
        }
        if (!m->allows(rank)) {
            throw std::invalid_argument("rank " + std::to_string(rank) + " is not a choice for module '" +
                                        name + "'");
        }
    }
}

DenseMatrix active_a(const AdapterModule& m, std::size_t rank)
{
    if (rank > m.a.rows()) {
        throw std::invalid_argument("active rank exceeds stored rank for '" + m.name + "'");
    }
    const auto v = m.a.values();
    return DenseMatrix(rank, m.a.cols(), std::vector<float>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank * m.a.cols())));
}

DenseMatrix active_b(const AdapterModule& m, std::size_t rank)
{
    if (rank > m.b.cols()) {
        throw std::invalid_argument("active rank exceeds stored rank for '" + m.name + "'");
    }
    DenseMatrix out(m.b.rows(), rank);
    for (std::size_t i = 0; i < m.b.rows(); ++i) {
        const auto src = m.b.row(i);
        std::copy_n(src.begin(), rank, out.row(i).begin());
    }
    return out;
}

DenseMatrix delta(const SuperAdapter& adapter, const std::string& module, std::size_t rank)
{
    const auto& m = adapter.module(module);
    if (!m.allows(rank)) {
        throw std::invalid_argument("rank " + std::to_string(rank) + " is not a choice for module '" + module + "'");
    }
    DenseMatrix d = matmul(active_b(m, rank), active_a(m, rank));
    const double s = adapter.scale(rank, m);
    for (auto& v : d.values()) {
        v = static_cast<float>(s * static_cast<double>(v));
    }
    return d;
}

SubAdapterConfig maximal_config(const SuperAdapter& adapter)
{
    SubAdapterConfig c;
    for (const auto& m : adapter.modules) {
        c[m.name] = m.rank_choices.front();
    }
    return c;
}

SubAdapterConfig minimal_config(const SuperAdapter& adapter)
{
    SubAdapterConfig c;
    for (const auto& m : adapter.modules) {
        c[m.name] = m.rank_choices.back();
    }
    return c;
}

std::pair<Model, PruneReport> merge(const Model& model, const SuperAdapter& adapter,
                                    const SubAdapterConfig& config)
{
    validate_config(adapter, config);
    Model merged = model;
    merged.frozen_hash.reset();
    for (const auto& [name, rank] : config) {
        auto& w = merged.module(name).weight;
        const DenseMatrix d = delta(adapter, name, rank);
        auto wv = w.values();
        auto dv = d.values();
        for (std::size_t i = 0; i < wv.size(); ++i) {
            wv[i] += dv[i];
        }
    }
    auto report = scan_report(merged, adapter.module_names(), 0.0);
    return {std::move(merged), std::move(report)};
}

} // namespace shears
