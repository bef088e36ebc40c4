// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "shears/linalg.hpp"
#include "shears/model.hpp"

namespace shears {

/// CSR copies of every target weight, in model module order.
struct SparseWeights {
    std::vector<CsrMatrix> weights;
};

SparseWeights build_sparse_weights(const Model& model);

/// Same computation as `forward`, with base products taken through CSR kernels.
DenseMatrix forward_sparse(const Model& model, const SparseWeights& sparse, const Batch& batch,
                           AdapterView adapters = {});

} // namespace shears
