// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/nls.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "shears/error.hpp"
#include "shears/search.hpp"

namespace shears {

namespace {

nlohmann::json config_json(const SubAdapterConfig& c)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, rank] : c) {
        j[name] = rank;
    }
    return j;
}

double gradient_norm(const AdapterGradients& g)
{
    double ss = 0.0;
    for (const auto* group : {&g.a, &g.b}) {
        for (const auto& [name, m] : *group) {
            for (float v : m.values()) {
                ss += static_cast<double>(v) * v;
            }
        }
    }
    return std::sqrt(ss);
}

void scale_gradients(AdapterGradients& g, double factor)
{
    for (auto* group : {&g.a, &g.b}) {
        for (auto& [name, m] : *group) {
            for (auto& v : m.values()) {
                v = static_cast<float>(v * factor);
            }
        }
    }
}

} // namespace

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("train: learning_rate must be > 0");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("train: batch_size must be >= 1");
    }
    if (grad_clip < 0.0) {
        throw std::invalid_argument("train: grad_clip must be >= 0");
    }
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw ArtifactError("cannot write training log " + path.string());
    }
    const std::size_t per_epoch = epochs.empty() ? steps.size() : steps.size() / epochs.size();
    std::size_t next_epoch = 0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& s = steps[i];
        out << nlohmann::json{{"type", "step"}, {"step", s.step}, {"loss", s.loss}, {"config", config_json(s.config)}}
                   .dump()
            << '\n';
        if (per_epoch > 0 && (i + 1) % per_epoch == 0 && next_epoch < epochs.size()) {
            const auto& e = epochs[next_epoch++];
            out << nlohmann::json{{"type", "epoch"}, {"epoch", e.epoch}, {"val_loss", e.val_loss},
                                  {"val_accuracy", e.val_accuracy}}
                       .dump()
                << '\n';
        }
    }
    for (; next_epoch < epochs.size(); ++next_epoch) {
        const auto& e = epochs[next_epoch];
        out << nlohmann::json{{"type", "epoch"}, {"epoch", e.epoch}, {"val_loss", e.val_loss},
                              {"val_accuracy", e.val_accuracy}}
                   .dump()
            << '\n';
    }
}

SubAdapterConfig sample_config(const SuperAdapter& adapter, Rng& rng)
{
    SubAdapterConfig c;
    for (const auto& m : adapter.modules) {
        c[m.name] = m.rank_choices[rng.uniform_index(m.rank_choices.size())];
    }
    return c;
}

AdapterOptimizer::AdapterOptimizer(const SuperAdapter& adapter, const TrainConfig& cfg) : cfg_(cfg)
{
    for (const auto& m : adapter.modules) {
        ModuleState st;
        st.m_a = DenseMatrix(m.a.rows(), m.a.cols());
        st.v_a = DenseMatrix(m.a.rows(), m.a.cols());
        st.m_b = DenseMatrix(m.b.rows(), m.b.cols());
        st.v_b = DenseMatrix(m.b.rows(), m.b.cols());
        st.steps.assign(m.max_rank(), 0);
        states_.emplace(m.name, std::move(st));
    }
}

void AdapterOptimizer::step(SuperAdapter& adapter, const SubAdapterConfig& active, const AdapterGradients& grads)
{
    for (const auto& [name, rank] : active) {
        auto& m = adapter.module(name);
        auto& st = states_.at(name);
        const auto& ga = grads.a.at(name);
        const auto& gb = grads.b.at(name);
        const std::size_t k = m.a.cols();
        const std::size_t d = m.b.rows();

        if (cfg_.optimizer == OptimizerKind::Sgd) {
            for (std::size_t j = 0; j < rank; ++j) {
                for (std::size_t c = 0; c < k; ++c) {
                    m.a(j, c) = static_cast<float>(m.a(j, c) - cfg_.learning_rate * ga(j, c));
                }
                for (std::size_t i = 0; i < d; ++i) {
                    m.b(i, j) = static_cast<float>(m.b(i, j) - cfg_.learning_rate * gb(i, j));
                }
            }
            continue;
        }

        auto update = [&](float& param, float& mom, float& var, double g, double bc1, double bc2) {
            const double mm = cfg_.beta1 * mom + (1.0 - cfg_.beta1) * g;
            const double vv = cfg_.beta2 * var + (1.0 - cfg_.beta2) * g * g;
            mom = static_cast<float>(mm);
            var = static_cast<float>(vv);
            param = static_cast<float>(param - cfg_.learning_rate * (mm / bc1) / (std::sqrt(vv / bc2) + cfg_.epsilon));
        };
        for (std::size_t j = 0; j < rank; ++j) {
            const auto t = static_cast<double>(++st.steps[j]);
            const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
            const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
            for (std::size_t c = 0; c < k; ++c) {
                update(m.a(j, c), st.m_a(j, c), st.v_a(j, c), ga(j, c), bc1, bc2);
            }
            for (std::size_t i = 0; i < d; ++i) {
                update(m.b(i, j), st.m_b(i, j), st.v_b(i, j), gb(i, j), bc1, bc2);
            }
        }
    }
}

std::pair<double, double> evaluate(const Model& model, const Batch& batch, AdapterView view, std::size_t chunk)
{
    if (batch.size() == 0) {
        throw std::invalid_argument("evaluate: empty batch");
    }
    double loss_sum = 0.0;
    double hits = 0.0;
    for (std::size_t begin = 0; begin < batch.size(); begin += chunk) {
        const Batch part = batch.slice(begin, begin + chunk);
        const DenseMatrix logits = forward(model, part, view);
        const double n = static_cast<double>(part.size());
        loss_sum += loss(logits, part.labels) * n;
        hits += accuracy(logits, part.labels) * n;
    }
    const double total = static_cast<double>(batch.size());
    return {loss_sum / total, hits / total};
}

TrainResult train(const Model& model, SuperAdapter adapter, const Batch& train_data, const Batch& val_data,
                  const TrainConfig& cfg)
{
    cfg.validate();
    require_frozen(model);
    if (train_data.size() == 0) {
        throw std::invalid_argument("train: empty training split");
    }

    SubAdapterConfig fixed;
    if (cfg.mode == TrainMode::FixedLora) {
        for (const auto& m : adapter.modules) {
            fixed[m.name] = cfg.fixed_rank == 0 ? m.max_rank() : cfg.fixed_rank;
        }
        validate_config(adapter, fixed);
    }
    const SubAdapterConfig monitor =
        cfg.mode == TrainMode::Nls ? heuristic_config(SearchSpace::from_adapter(adapter)) : fixed;

    const Rng root(cfg.seed);
    Rng shuffle_rng = root.split(1);
    Rng sample_rng = root.split(2);
    AdapterOptimizer optimizer(adapter, cfg);

    TrainResult result;
    std::vector<std::size_t> order(train_data.size());
    const std::size_t per_epoch = (train_data.size() + cfg.batch_size - 1) / cfg.batch_size;
    const double total_steps = static_cast<double>(per_epoch * cfg.epochs);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i-- > 1;) {
            std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
        }
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            const Batch batch = train_data.gather({order.begin() + static_cast<std::ptrdiff_t>(begin),
                                                   order.begin() + static_cast<std::ptrdiff_t>(end)});
            SubAdapterConfig active = cfg.mode == TrainMode::Nls ? sample_config(adapter, sample_rng) : fixed;
            AdapterGradients grads;
            try {
                grads = adapter_gradients(model, adapter, active, batch);
            } catch (const NumericError& e) {
                throw NumericError("train: step " + std::to_string(step) + ": " + e.what());
            }
            if (!std::isfinite(grads.loss)) {
                throw NumericError("train: non-finite loss at step " + std::to_string(step));
            }
            const double norm = gradient_norm(grads);
            if (!std::isfinite(norm)) {
                throw NumericError("train: non-finite gradient at step " + std::to_string(step));
            }
            if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
                scale_gradients(grads, cfg.grad_clip / norm);
            }
            if (cfg.schedule == LrSchedule::Linear) {
                optimizer.set_learning_rate(cfg.learning_rate * (1.0 - static_cast<double>(step) / total_steps));
            }
            optimizer.step(adapter, active, grads);
            result.log.steps.push_back({step, std::move(active), grads.loss});
            ++step;
        }
        const auto [vl, va] = val_data.size() > 0 ? evaluate(model, val_data, {&adapter, &monitor})
                                                  : std::pair<double, double>{0.0, 0.0};
        result.log.epochs.push_back({epoch, vl, va});
    }
    require_frozen(model);
    if (step > 0) {
        adapter.trained = true;
    }
    result.adapter = std::move(adapter);
    return result;
}

} // namespace shears
