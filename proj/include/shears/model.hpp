// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shears/linalg.hpp"
#include "shears/rng.hpp"

namespace shears {

struct SuperAdapter;
using SubAdapterConfig = std::map<std::string, std::size_t>;

struct ModelConfig {
    std::size_t vocab_size = 17;
    std::size_t d_model = 32;
    std::size_t n_blocks = 2;
    std::size_t d_ff = 128;
    std::size_t n_classes = 4;
    std::size_t seq_len = 5;
    std::uint64_t seed = 0;
    /// Amplitude of the fixed sinusoidal position code added to embeddings.
    float position_scale = 0.02f;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Projection kinds inside a block; names follow "b<block>.<kind>".
enum class Projection { Q, K, V, O, Up, Gate, Down };

inline constexpr Projection kAllProjections[] = {Projection::Q,  Projection::K,    Projection::V,
                                                  Projection::O,  Projection::Up,   Projection::Gate,
                                                  Projection::Down};

const char* projection_name(Projection p) noexcept;
std::string module_name(std::size_t block, Projection p);

/// A target linear module. Weight is stored [out × in]; y = x · Wᵀ.
struct LinearModule {
    std::string name;
    DenseMatrix weight;

    [[nodiscard]] std::size_t out_features() const noexcept { return weight.rows(); }
    [[nodiscard]] std::size_t in_features() const noexcept { return weight.cols(); }
};

struct Model {
    ModelConfig config;
    DenseMatrix embedding;       // [vocab × d_model]
    DenseMatrix head;            // [d_model × n_classes]
    std::vector<LinearModule> modules;  // block-major, Q K V O Up Gate Down

    /// SHA-256 (hex) of the target weights recorded when the model was frozen.
    std::optional<std::string> frozen_hash;

    [[nodiscard]] std::vector<std::string> module_names() const;
    [[nodiscard]] const LinearModule& module(const std::string& name) const;
    LinearModule& module(const std::string& name);
    [[nodiscard]] bool has_module(const std::string& name) const noexcept;
    [[nodiscard]] const LinearModule& module(std::size_t block, Projection p) const;
};

struct Batch {
    std::size_t seq_len = 0;
    std::vector<std::uint32_t> tokens;   // [batch × seq_len], row-major
    std::vector<std::uint32_t> labels;   // [batch]

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] Batch slice(std::size_t begin, std::size_t end) const;
    [[nodiscard]] Batch gather(const std::vector<std::size_t>& rows) const;
};

Model init_model(const ModelConfig& cfg, Rng& rng);

/// Throws std::invalid_argument on token/label ranges or seq_len mismatch.
void validate_batch(const ModelConfig& cfg, const Batch& batch);

/// Adapter attachment for a forward/gradient call. Without an active
/// config, the adapter contributes nothing.
struct AdapterView {
    const SuperAdapter* adapter = nullptr;
    const SubAdapterConfig* active = nullptr;
};

DenseMatrix forward(const Model& model, const Batch& batch, AdapterView adapters = {});

/// Mean softmax cross-entropy computed in float64.
double loss(const DenseMatrix& logits, const std::vector<std::uint32_t>& labels);
double accuracy(const DenseMatrix& logits, const std::vector<std::uint32_t>& labels);

/// Per-target column L2 norms of each module's input over every token of
/// every batch.
std::map<std::string, std::vector<float>> capture_activations(const Model& model,
                                                              const std::vector<Batch>& batches,
                                                              const std::vector<std::string>& targets);

/// Gradients of the mean loss restricted to the active adapter slices:
/// a[name] is [r × k], b[name] is [d × r] for the module's active rank r.
struct AdapterGradients {
    double loss = 0.0;
    std::map<std::string, DenseMatrix> a;
    std::map<std::string, DenseMatrix> b;
};

AdapterGradients adapter_gradients(const Model& model, const SuperAdapter& adapter,
                                   const SubAdapterConfig& active, const Batch& batch);

/// Hex SHA-256 over the concatenated float32 payloads of the target modules.
std::string target_weights_hash(const Model& model);

/// Marks a (typically dense) model frozen without pruning.
void freeze(Model& model);

/// Throws ArtifactError unless the model is frozen and its weights match the recorded hash.
void require_frozen(const Model& model);

} // namespace shears
