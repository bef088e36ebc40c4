// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <stdexcept>

#include <openssl/evp.h>

#include "shears/adapters.hpp"
#include "shears/error.hpp"
#include "shears/sparse_forward.hpp"

namespace shears {

namespace {

constexpr double kRmsEps = 1e-6;

void require(bool ok, const std::string& what)
{
    if (!ok) {
        throw std::invalid_argument(what);
    }
}

void add_inplace(DenseMatrix& dst, const DenseMatrix& src)
{
    auto d = dst.values();
    auto s = src.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += s[i];
    }
}

void scale_inplace(DenseMatrix& m, double s)
{
    for (auto& v : m.values()) {
        v = static_cast<float>(s * static_cast<double>(v));
    }
}

/// Row-wise x / sqrt(mean(x²) + eps); stores 1/rms per row for the backward pass.
DenseMatrix rms_normalize(const DenseMatrix& x, std::vector<double>* inv_rms)
{
    DenseMatrix out(x.rows(), x.cols());
    if (inv_rms != nullptr) {
        inv_rms->resize(x.rows());
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto row = x.row(i);
        double ss = 0.0;
        for (float v : row) {
            ss += static_cast<double>(v) * v;
        }
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(row.size()) + kRmsEps);
        auto orow = out.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            orow[j] = static_cast<float>(row[j] * inv);
        }
        if (inv_rms != nullptr) {
            (*inv_rms)[i] = inv;
        }
    }
    return out;
}

DenseMatrix rms_backward(const DenseMatrix& x, const std::vector<double>& inv_rms, const DenseMatrix& dy)
{
    DenseMatrix dx(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto xr = x.row(i);
        const auto gr = dy.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < xr.size(); ++j) {
            dot += static_cast<double>(gr[j]) * xr[j];
        }
        const double inv = inv_rms[i];
        const double coef = dot * inv * inv * inv / n;
        auto dr = dx.row(i);
        for (std::size_t j = 0; j < xr.size(); ++j) {
            dr[j] = static_cast<float>(gr[j] * inv - xr[j] * coef);
        }
    }
    return dx;
}

double sigmoid(double x)
{
    return 1.0 / (1.0 + std::exp(-x));
}

struct LinearTrace {
    DenseMatrix input;
    DenseMatrix adapter_hidden;  // x · A_rᵀ, empty when no adapter is active
    std::size_t rank = 0;
};

struct BlockTrace {
    DenseMatrix x_in;
    std::vector<double> inv_rms1;
    DenseMatrix q, k, v;
    std::vector<DenseMatrix> probs;  // per sample [L × L]
    DenseMatrix x_mid;
    std::vector<double> inv_rms2;
    DenseMatrix gate, up;
    std::array<LinearTrace, 7> linears;
};

struct ForwardTrace {
    std::vector<BlockTrace> blocks;
    DenseMatrix x_final;
    DenseMatrix pooled;
    std::vector<double> inv_rms_pooled;
    std::map<std::string, std::vector<double>>* calibration = nullptr;
};

std::size_t projection_index(Projection p)
{
    return static_cast<std::size_t>(p);
}

/// Base product x · Wᵀ, either dense or through a CSR copy of W.
class BaseKernel {
public:
    explicit BaseKernel(const SparseWeights* sparse) : sparse_(sparse) {}

    DenseMatrix apply(const Model& model, std::size_t module_index, const DenseMatrix& x) const
    {
        if (sparse_ == nullptr) {
            return matmul_bt(x, model.modules[module_index].weight);
        }
        return transpose(csr_matmul(sparse_->weights[module_index], transpose(x)));
    }

private:
    const SparseWeights* sparse_;
};

struct ActiveAdapter {
    const AdapterModule* module = nullptr;
    std::size_t rank = 0;
    double scale = 0.0;
};

ActiveAdapter resolve(const AdapterView& view, const std::string& name)
{
    if (view.adapter == nullptr || view.active == nullptr) {
        return {};
    }
    const auto* m = view.adapter->find(name);
    if (m == nullptr) {
        return {};
    }
    const auto rank = view.active->at(name);
    return {m, rank, view.adapter->scale(rank, *m)};
}

DenseMatrix linear(const Model& model, const BaseKernel& kernel, std::size_t index, const DenseMatrix& x,
                   const ActiveAdapter& ad, LinearTrace* trace)
{
    DenseMatrix y = kernel.apply(model, index, x);
    if (trace != nullptr) {
        trace->input = x;
        trace->rank = ad.rank;
        trace->adapter_hidden = DenseMatrix();
    }
    if (ad.module == nullptr) {
        return y;
    }
    DenseMatrix hidden = matmul_bt(x, active_a(*ad.module, ad.rank));
    const DenseMatrix low_rank = matmul_bt(hidden, active_b(*ad.module, ad.rank));
    auto yv = y.values();
    auto lv = low_rank.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] += static_cast<float>(ad.scale * static_cast<double>(lv[i]));
    }
    if (trace != nullptr) {
        trace->adapter_hidden = std::move(hidden);
    }
    return y;
}

void record_calibration(ForwardTrace* trace, const std::string& name, const DenseMatrix& x)
{
    if (trace == nullptr || trace->calibration == nullptr) {
        return;
    }
    auto it = trace->calibration->find(name);
    if (it != trace->calibration->end()) {
        accumulate_column_squares(x, it->second);
    }
}

DenseMatrix embed(const Model& model, const Batch& batch)
{
    const auto& cfg = model.config;
    const std::size_t n = batch.size();
    const std::size_t len = cfg.seq_len;
    const std::size_t d = cfg.d_model;
    DenseMatrix x(n * len, d);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t p = 0; p < len; ++p) {
            const auto tok = batch.tokens[b * len + p];
            const auto erow = model.embedding.row(tok);
            auto xrow = x.row(b * len + p);
            for (std::size_t j = 0; j < d; ++j) {
                const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
                const double angle = static_cast<double>(p) * freq;
                const double code = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
                xrow[j] = static_cast<float>(erow[j] + cfg.position_scale * code);
            }
        }
    }
    return x;
}

void check_adapter_view(const Model& model, const AdapterView& view)
{
    if (view.active == nullptr) {
        return;
    }
    require(view.adapter != nullptr, "forward: active config given without adapters");
    validate_config(*view.adapter, *view.active);
    for (const auto& m : view.adapter->modules) {
        require(model.has_module(m.name), "forward: adapter module '" + m.name + "' not in model");
        const auto& w = model.module(m.name).weight;
        require(m.a.cols() == w.cols() && m.b.rows() == w.rows(),
                "forward: adapter '" + m.name + "' shape does not match module weight");
    }
}

DenseMatrix run_forward(const Model& model, const Batch& batch, const AdapterView& view,
                        const SparseWeights* sparse, ForwardTrace* trace)
{
    const auto& cfg = model.config;
    validate_batch(cfg, batch);
    check_adapter_view(model, view);
    const BaseKernel kernel(sparse);
    const std::size_t n = batch.size();
    const std::size_t len = cfg.seq_len;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));

    DenseMatrix x = embed(model, batch);
    if (trace != nullptr) {
        trace->blocks.resize(cfg.n_blocks);
    }
    for (std::size_t blk = 0; blk < cfg.n_blocks; ++blk) {
        BlockTrace* bt = trace != nullptr ? &trace->blocks[blk] : nullptr;
        const std::size_t base = blk * 7;
        auto lin = [&](Projection p, const DenseMatrix& in) {
            const std::size_t idx = base + projection_index(p);
            const auto& name = model.modules[idx].name;
            record_calibration(trace, name, in);
            return linear(model, kernel, idx, in, resolve(view, name),
                          bt != nullptr ? &bt->linears[projection_index(p)] : nullptr);
        };

        std::vector<double> inv1;
        DenseMatrix h1 = rms_normalize(x, &inv1);
        DenseMatrix q = lin(Projection::Q, h1);
        DenseMatrix k = lin(Projection::K, h1);
        DenseMatrix v = lin(Projection::V, h1);

        DenseMatrix att(n * len, cfg.d_model);
        std::vector<DenseMatrix> probs;
        probs.reserve(n);
        for (std::size_t b = 0; b < n; ++b) {
            DenseMatrix p(len, len);
            for (std::size_t i = 0; i < len; ++i) {
                const auto qi = q.row(b * len + i);
                std::vector<double> s(len);
                double mx = -INFINITY;
                for (std::size_t j = 0; j < len; ++j) {
                    const auto kj = k.row(b * len + j);
                    double dot = 0.0;
                    for (std::size_t t = 0; t < qi.size(); ++t) {
                        dot += static_cast<double>(qi[t]) * kj[t];
                    }
                    s[j] = dot * inv_sqrt_d;
                    mx = std::max(mx, s[j]);
                }
                double z = 0.0;
                for (auto& sj : s) {
                    sj = std::exp(sj - mx);
                    z += sj;
                }
                for (std::size_t j = 0; j < len; ++j) {
                    p(i, j) = static_cast<float>(s[j] / z);
                }
                auto arow = att.row(b * len + i);
                for (std::size_t t = 0; t < arow.size(); ++t) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                        acc += static_cast<double>(p(i, j)) * v(b * len + j, t);
                    }
                    arow[t] = static_cast<float>(acc);
                }
            }
            probs.push_back(std::move(p));
        }
        DenseMatrix attn_out = lin(Projection::O, att);
        DenseMatrix x_mid = x;
        add_inplace(x_mid, attn_out);

        std::vector<double> inv2;
        DenseMatrix h2 = rms_normalize(x_mid, &inv2);
        DenseMatrix g = lin(Projection::Gate, h2);
        DenseMatrix u = lin(Projection::Up, h2);
        DenseMatrix f(g.rows(), g.cols());
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double gv = g.values()[i];
            f.values()[i] = static_cast<float>(gv * sigmoid(gv) * u.values()[i]);
        }
        DenseMatrix ffn_out = lin(Projection::Down, f);
        DenseMatrix x_out = x_mid;
        add_inplace(x_out, ffn_out);

        if (bt != nullptr) {
            bt->x_in = std::move(x);
            bt->inv_rms1 = std::move(inv1);
            bt->q = std::move(q);
            bt->k = std::move(k);
            bt->v = std::move(v);
            bt->probs = std::move(probs);
            bt->x_mid = std::move(x_mid);
            bt->inv_rms2 = std::move(inv2);
            bt->gate = std::move(g);
            bt->up = std::move(u);
        }
        x = std::move(x_out);
    }

    DenseMatrix pooled(n, cfg.d_model);
    for (std::size_t b = 0; b < n; ++b) {
        auto prow = pooled.row(b);
        for (std::size_t j = 0; j < cfg.d_model; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < len; ++p) {
                acc += x(b * len + p, j);
            }
            prow[j] = static_cast<float>(acc / static_cast<double>(len));
        }
    }
    std::vector<double> inv_pool;
    DenseMatrix z = rms_normalize(pooled, &inv_pool);
    DenseMatrix logits = matmul(z, model.head);
    require_finite(logits, "forward");
    if (trace != nullptr) {
        trace->x_final = std::move(x);
        trace->pooled = std::move(pooled);
        trace->inv_rms_pooled = std::move(inv_pool);
    }
    return logits;
}

/// Backward through one linear module; accumulates adapter gradients and returns dL/dx.
DenseMatrix linear_backward(const Model& model, std::size_t index, const LinearTrace& lt,
                            const ActiveAdapter& ad, const DenseMatrix& dy, AdapterGradients& grads)
{
    const auto& w = model.modules[index].weight;
    DenseMatrix dx = matmul(dy, w);
    if (ad.module == nullptr) {
        return dx;
    }
    const auto& name = model.modules[index].name;
    DenseMatrix db = matmul_at(dy, lt.adapter_hidden);
    scale_inplace(db, ad.scale);
    DenseMatrix dh = matmul(dy, active_b(*ad.module, ad.rank));
    scale_inplace(dh, ad.scale);
    DenseMatrix da = matmul_at(dh, lt.input);
    add_inplace(dx, matmul(dh, active_a(*ad.module, ad.rank)));
    grads.a[name] = std::move(da);
    grads.b[name] = std::move(db);
    return dx;
}

} // namespace

void ModelConfig::validate() const
{
    require(vocab_size >= 1 && d_model >= 1 && n_blocks >= 1 && d_ff >= 1 && n_classes >= 1 && seq_len >= 1,
            "ModelConfig: all sizes must be >= 1");
    require(std::isfinite(position_scale), "ModelConfig: position_scale must be finite");
}

const char* projection_name(Projection p) noexcept
{
    switch (p) {
    case Projection::Q: return "q";
    case Projection::K: return "k";
    case Projection::V: return "v";
    case Projection::O: return "o";
    case Projection::Up: return "up";
    case Projection::Gate: return "gate";
    case Projection::Down: return "down";
    }
    return "?";
}

std::string module_name(std::size_t block, Projection p)
{
    return "b" + std::to_string(block) + "." + projection_name(p);
}

std::vector<std::string> Model::module_names() const
{
    std::vector<std::string> names;
    names.reserve(modules.size());
    for (const auto& m : modules) {
        names.push_back(m.name);
    }
    return names;
}

const LinearModule& Model::module(const std::string& name) const
{
    for (const auto& m : modules) {
        if (m.name == name) {
            return m;
        }
    }
    throw std::invalid_argument("unknown module '" + name + "'");
}

LinearModule& Model::module(const std::string& name)
{
    return const_cast<LinearModule&>(std::as_const(*this).module(name));
}

bool Model::has_module(const std::string& name) const noexcept
{
    return std::any_of(modules.begin(), modules.end(), [&](const auto& m) { return m.name == name; });
}

const LinearModule& Model::module(std::size_t block, Projection p) const
{
    return modules.at(block * 7 + projection_index(p));
}

Batch Batch::slice(std::size_t begin, std::size_t end) const
{
    end = std::min(end, size());
    Batch out;
    out.seq_len = seq_len;
    if (begin >= end) {
        return out;
    }
    out.tokens.assign(tokens.begin() + static_cast<std::ptrdiff_t>(begin * seq_len),
                      tokens.begin() + static_cast<std::ptrdiff_t>(end * seq_len));
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      labels.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

Batch Batch::gather(const std::vector<std::size_t>& rows) const
{
    Batch out;
    out.seq_len = seq_len;
    out.tokens.reserve(rows.size() * seq_len);
    out.labels.reserve(rows.size());
    for (auto r : rows) {
        out.tokens.insert(out.tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(r * seq_len),
                          tokens.begin() + static_cast<std::ptrdiff_t>((r + 1) * seq_len));
        out.labels.push_back(labels.at(r));
    }
    return out;
}

Model init_model(const ModelConfig& cfg, Rng& rng)
{
    cfg.validate();
    constexpr double kStd = 0.02;
    Model m;
    m.config = cfg;
    m.embedding = DenseMatrix::gaussian(cfg.vocab_size, cfg.d_model, kStd, rng);
    for (std::size_t blk = 0; blk < cfg.n_blocks; ++blk) {
        for (auto p : kAllProjections) {
            std::size_t out = cfg.d_model;
            std::size_t in = cfg.d_model;
            if (p == Projection::Up || p == Projection::Gate) {
                out = cfg.d_ff;
            } else if (p == Projection::Down) {
                in = cfg.d_ff;
            }
            m.modules.push_back({module_name(blk, p), DenseMatrix::gaussian(out, in, kStd, rng)});
        }
    }
    m.head = DenseMatrix::gaussian(cfg.d_model, cfg.n_classes, kStd, rng);
    return m;
}

void validate_batch(const ModelConfig& cfg, const Batch& batch)
{
    require(batch.size() >= 1, "batch is empty");
    require(batch.seq_len == cfg.seq_len, "batch seq_len " + std::to_string(batch.seq_len) +
                                              " != model seq_len " + std::to_string(cfg.seq_len));
    require(batch.tokens.size() == batch.size() * batch.seq_len, "batch token count does not match labels");
    for (auto t : batch.tokens) {
        require(t < cfg.vocab_size, "token id " + std::to_string(t) + " out of vocabulary");
    }
    for (auto l : batch.labels) {
        require(l < cfg.n_classes, "label " + std::to_string(l) + " out of range");
    }
}

DenseMatrix forward(const Model& model, const Batch& batch, AdapterView adapters)
{
    return run_forward(model, batch, adapters, nullptr, nullptr);
}

SparseWeights build_sparse_weights(const Model& model)
{
    SparseWeights out;
    out.weights.reserve(model.modules.size());
    for (const auto& m : model.modules) {
        out.weights.push_back(csr_from_dense(m.weight));
    }
    return out;
}

DenseMatrix forward_sparse(const Model& model, const SparseWeights& sparse, const Batch& batch,
                           AdapterView adapters)
{
    require(sparse.weights.size() == model.modules.size(), "forward_sparse: CSR weights do not match model");
    return run_forward(model, batch, adapters, &sparse, nullptr);
}

double loss(const DenseMatrix& logits, const std::vector<std::uint32_t>& labels)
{
    require(logits.rows() == labels.size(), "loss: " + std::to_string(labels.size()) + " labels for " +
                                                 logits.shape_string() + " logits");
    require(!labels.empty(), "loss: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i);
        require(labels[i] < row.size(), "loss: label " + std::to_string(labels[i]) + " out of range");
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (float v : row) {
            z += std::exp(static_cast<double>(v) - mx);
        }
        total += mx + std::log(z) - static_cast<double>(row[labels[i]]);
    }
    return std::max(0.0, total / static_cast<double>(logits.rows()));
}

double accuracy(const DenseMatrix& logits, const std::vector<std::uint32_t>& labels)
{
    require(logits.rows() == labels.size() && !labels.empty(), "accuracy: shape mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i);
        const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        hits += pred == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::map<std::string, std::vector<float>> capture_activations(const Model& model,
                                                              const std::vector<Batch>& batches,
                                                              const std::vector<std::string>& targets)
{
    require(!batches.empty(), "capture_activations: no calibration batches");
    std::map<std::string, std::vector<double>> sums;
    for (const auto& name : targets) {
        sums[name].assign(model.module(name).in_features(), 0.0);
    }
    ForwardTrace trace;
    trace.calibration = &sums;
    for (const auto& batch : batches) {
        trace.blocks.clear();
        run_forward(model, batch, {}, nullptr, &trace);
    }
    std::map<std::string, std::vector<float>> norms;
    for (const auto& [name, s] : sums) {
        auto& out = norms[name];
        out.resize(s.size());
        std::transform(s.begin(), s.end(), out.begin(), [](double v) { return static_cast<float>(std::sqrt(v)); });
    }
    return norms;
}

AdapterGradients adapter_gradients(const Model& model, const SuperAdapter& adapter,
                                   const SubAdapterConfig& active, const Batch& batch)
{
    const AdapterView view{&adapter, &active};
    ForwardTrace trace;
    const DenseMatrix logits = run_forward(model, batch, view, nullptr, &trace);
    const auto& cfg = model.config;
    const std::size_t n = batch.size();
    const std::size_t len = cfg.seq_len;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));

    AdapterGradients grads;
    grads.loss = loss(logits, batch.labels);

    // d(mean CE)/dlogits = (softmax - onehot) / n
    DenseMatrix dlogits(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (float v : row) {
            z += std::exp(static_cast<double>(v) - mx);
        }
        for (std::size_t c = 0; c < row.size(); ++c) {
            const double p = std::exp(static_cast<double>(row[c]) - mx) / z;
            dlogits(i, c) = static_cast<float>((p - (c == batch.labels[i] ? 1.0 : 0.0)) / static_cast<double>(n));
        }
    }
    const DenseMatrix dz = matmul_bt(dlogits, model.head);
    const DenseMatrix dpooled = rms_backward(trace.pooled, trace.inv_rms_pooled, dz);

    DenseMatrix dx(n * len, cfg.d_model);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t p = 0; p < len; ++p) {
            auto row = dx.row(b * len + p);
            for (std::size_t j = 0; j < cfg.d_model; ++j) {
                row[j] = static_cast<float>(dpooled(b, j) / static_cast<double>(len));
            }
        }
    }

    for (std::size_t blk = cfg.n_blocks; blk-- > 0;) {
        const BlockTrace& bt = trace.blocks[blk];
        const std::size_t base = blk * 7;
        auto back = [&](Projection p, const DenseMatrix& dy) {
            const std::size_t idx = base + projection_index(p);
            return linear_backward(model, idx, bt.linears[projection_index(p)],
                                   resolve(view, model.modules[idx].name), dy, grads);
        };

        // FFN: x_out = x_mid + down(silu(gate) ⊙ up)
        const DenseMatrix df = back(Projection::Down, dx);
        DenseMatrix dgate(df.rows(), df.cols());
        DenseMatrix dup(df.rows(), df.cols());
        for (std::size_t i = 0; i < df.size(); ++i) {
            const double g = bt.gate.values()[i];
            const double sg = sigmoid(g);
            const double grad = df.values()[i];
            dup.values()[i] = static_cast<float>(grad * g * sg);
            dgate.values()[i] = static_cast<float>(grad * bt.up.values()[i] * sg * (1.0 + g * (1.0 - sg)));
        }
        DenseMatrix dh2 = back(Projection::Gate, dgate);
        add_inplace(dh2, back(Projection::Up, dup));
        DenseMatrix dx_mid = dx;
        add_inplace(dx_mid, rms_backward(bt.x_mid, bt.inv_rms2, dh2));

        // Attention: x_mid = x_in + o(softmax(q kᵀ / √d) v)
        const DenseMatrix datt = back(Projection::O, dx_mid);
        DenseMatrix dq(n * len, cfg.d_model);
        DenseMatrix dk(n * len, cfg.d_model);
        DenseMatrix dv(n * len, cfg.d_model);
        for (std::size_t b = 0; b < n; ++b) {
            const DenseMatrix& p = bt.probs[b];
            for (std::size_t i = 0; i < len; ++i) {
                std::vector<double> dp(len);
                double weighted = 0.0;
                const auto da = datt.row(b * len + i);
                for (std::size_t j = 0; j < len; ++j) {
                    const auto vj = bt.v.row(b * len + j);
                    double dot = 0.0;
                    for (std::size_t t = 0; t < da.size(); ++t) {
                        dot += static_cast<double>(da[t]) * vj[t];
                    }
                    dp[j] = dot;
                    weighted += dot * p(i, j);
                }
                auto dqi = dq.row(b * len + i);
                const auto qi = bt.q.row(b * len + i);
                for (std::size_t j = 0; j < len; ++j) {
                    const double pij = p(i, j);
                    const double ds = pij * (dp[j] - weighted) * inv_sqrt_d;
                    const auto kj = bt.k.row(b * len + j);
                    auto dkj = dk.row(b * len + j);
                    auto dvj = dv.row(b * len + j);
                    for (std::size_t t = 0; t < dqi.size(); ++t) {
                        dqi[t] = static_cast<float>(dqi[t] + ds * kj[t]);
                        dkj[t] = static_cast<float>(dkj[t] + ds * qi[t]);
                        dvj[t] = static_cast<float>(dvj[t] + pij * da[t]);
                    }
                }
            }
        }
        DenseMatrix dh1 = back(Projection::Q, dq);
        add_inplace(dh1, back(Projection::K, dk));
        add_inplace(dh1, back(Projection::V, dv));
        dx = std::move(dx_mid);
        add_inplace(dx, rms_backward(bt.x_in, bt.inv_rms1, dh1));
    }
    return grads;
}

std::string target_weights_hash(const Model& model)
{
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-256 unavailable");
    }
    std::vector<unsigned char> buf;
    for (const auto& m : model.modules) {
        const auto values = m.weight.values();
        buf.resize(values.size() * 4);
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(values[i]);
            for (std::size_t b = 0; b < 4; ++b) {
                buf[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
            }
        }
        EVP_DigestUpdate(ctx, buf.data(), buf.size());
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest.data(), &len);
    EVP_MD_CTX_free(ctx);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        hex.push_back(kHex[digest[i] >> 4]);
        hex.push_back(kHex[digest[i] & 0xF]);
    }
    return hex;
}

void freeze(Model& model)
{
    model.frozen_hash = target_weights_hash(model);
}

void require_frozen(const Model& model)
{
    if (!model.frozen_hash) {
        throw ArtifactError("model is not frozen; prune it first or freeze it explicitly for a dense run");
    }
    const auto actual = target_weights_hash(model);
    if (actual != *model.frozen_hash) {
        throw ArtifactError("target weights do not match the recorded frozen hash (expected " +
                            *model.frozen_hash + ", found " + actual + ")");
    }
}

} // namespace shears
