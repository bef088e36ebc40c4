// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace shears {

class Rng;

/// Row-major float32 matrix. Products accumulate in float64 and round once.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> values);
    DenseMatrix(std::initializer_list<std::initializer_list<float>> rows);

    static DenseMatrix identity(std::size_t n);
    static DenseMatrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

    float& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const float> row(std::size_t r) const noexcept
    {
        return {values_.data() + r * cols_, cols_};
    }

    std::span<float> values() noexcept { return values_; }
    [[nodiscard]] std::span<const float> values() const noexcept { return values_; }

    [[nodiscard]] std::string shape_string() const;

    /// Bitwise equality of shape and payload (distinguishes +0/-0 and NaN payloads).
    [[nodiscard]] bool bit_equal(const DenseMatrix& other) const noexcept;

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> values_;
};

/// Compressed sparse row matrix. Exact zeros (either sign) are never stored.
struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr{0};
    std::vector<std::uint32_t> col_idx;
    std::vector<float> values;

    [[nodiscard]] std::size_t nnz() const noexcept { return values.size(); }
};

/// a · b
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// a · bᵀ, the layout used by linear layers with weights stored [out × in].
DenseMatrix matmul_bt(const DenseMatrix& a, const DenseMatrix& b);
/// aᵀ · b
DenseMatrix matmul_at(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& m);

CsrMatrix csr_from_dense(const DenseMatrix& m);
DenseMatrix dense_from_csr(const CsrMatrix& s);
/// s · d
DenseMatrix csr_matmul(const CsrMatrix& s, const DenseMatrix& d);

/// Euclidean norm of every column; throws on a matrix with no rows.
std::vector<float> column_l2_norms(const DenseMatrix& x);
/// Σᵢ x[i][j]² per column in float64, for running accumulation across batches.
void accumulate_column_squares(const DenseMatrix& x, std::span<double> sums);

std::size_t count_nonzero(std::span<const float> values) noexcept;
bool all_finite(std::span<const float> values) noexcept;

/// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(const DenseMatrix& m, const std::string& what);

} // namespace shears
