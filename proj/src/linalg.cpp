// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/linalg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "shears/error.hpp"
#include "shears/rng.hpp"

#if defined(__x86_64__) && defined(__GNUC__) && !defined(__clang__)
// AVX2 without FMA: same rounding as the generic build, just wider lanes.
#define SHEARS_KERNEL __attribute__((target_clones("avx2", "default")))
#else
#define SHEARS_KERNEL
#endif

namespace shears {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const std::string& a, const std::string& b)
{
    throw std::invalid_argument(std::string(op) + ": dimension mismatch " + a + " vs " + b);
}

std::string shape_of(std::size_t r, std::size_t c)
{
    return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

} // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill)
{
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values))
{
    if (values_.size() != rows * cols) {
        throw std::invalid_argument("DenseMatrix: " + std::to_string(values_.size()) +
                                    " values for shape " + shape_of(rows, cols));
    }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<float>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size())
{
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw std::invalid_argument("DenseMatrix: ragged initializer");
        }
        values_.insert(values_.end(), r.begin(), r.end());
    }
}

DenseMatrix DenseMatrix::identity(std::size_t n)
{
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0f;
    }
    return m;
}

DenseMatrix DenseMatrix::gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng)
{
    DenseMatrix m(rows, cols);
    for (auto& v : m.values_) {
        v = static_cast<float>(stddev * rng.normal());
    }
    return m;
}

std::string DenseMatrix::shape_string() const
{
    return shape_of(rows_, cols_);
}

bool DenseMatrix::bit_equal(const DenseMatrix& other) const noexcept
{
    if (rows_ != other.rows_ || cols_ != other.cols_) {
        return false;
    }
    return std::equal(values_.begin(), values_.end(), other.values_.begin(), [](float x, float y) {
        return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
    });
}

namespace {

// Cloned kernels never throw: unwinding through target_clones is unreliable
// on some toolchains, so checks stay in the wrappers below.

// out[n×p] = a[n×k] · b[k×p]; acc holds p doubles.
SHEARS_KERNEL void matmul_kernel(const float* a, const float* b, float* out, double* acc, std::size_t n,
                                 std::size_t k_dim, std::size_t p) noexcept
{
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc, acc + p, 0.0);
        const float* arow = a + i * k_dim;
        std::size_t k = 0;
        for (; k + 4 <= k_dim; k += 4) {
            const double a0 = arow[k];
            const double a1 = arow[k + 1];
            const double a2 = arow[k + 2];
            const double a3 = arow[k + 3];
            if (a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0) {
                continue;
            }
            const float* b0 = b + k * p;
            const float* b1 = b0 + p;
            const float* b2 = b1 + p;
            const float* b3 = b2 + p;
            for (std::size_t j = 0; j < p; ++j) {
                acc[j] += a0 * static_cast<double>(b0[j]) + a1 * static_cast<double>(b1[j]) +
                          a2 * static_cast<double>(b2[j]) + a3 * static_cast<double>(b3[j]);
            }
        }
        for (; k < k_dim; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) {
                continue;
            }
            const float* brow = b + k * p;
            for (std::size_t j = 0; j < p; ++j) {
                acc[j] += aik * static_cast<double>(brow[j]);
            }
        }
        float* orow = out + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            orow[j] = static_cast<float>(acc[j]);
        }
    }
}

// acc[m×p] += a[n×m]ᵀ · b[n×p]
SHEARS_KERNEL void matmul_at_kernel(const float* a, const float* b, double* acc, std::size_t n, std::size_t m,
                                    std::size_t p) noexcept
{
    for (std::size_t r = 0; r < n; ++r) {
        const float* arow = a + r * m;
        const float* brow = b + r * p;
        for (std::size_t i = 0; i < m; ++i) {
            const double ani = arow[i];
            if (ani == 0.0) {
                continue;
            }
            double* dst = acc + i * p;
            for (std::size_t j = 0; j < p; ++j) {
                dst[j] += ani * static_cast<double>(brow[j]);
            }
        }
    }
}

SHEARS_KERNEL void csr_matmul_kernel(const CsrMatrix& s, const float* d, float* out, double* acc,
                                     std::size_t p) noexcept
{
    for (std::size_t i = 0; i < s.rows; ++i) {
        std::fill(acc, acc + p, 0.0);
        for (auto q = s.row_ptr[i]; q < s.row_ptr[i + 1]; ++q) {
            const double v = s.values[q];
            const float* drow = d + static_cast<std::size_t>(s.col_idx[q]) * p;
            for (std::size_t j = 0; j < p; ++j) {
                acc[j] += v * static_cast<double>(drow[j]);
            }
        }
        float* orow = out + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            orow[j] = static_cast<float>(acc[j]);
        }
    }
}

} // namespace

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b)
{
    if (a.cols() != b.rows()) {
        shape_mismatch("matmul", a.shape_string(), b.shape_string());
    }
    DenseMatrix out(a.rows(), b.cols());
    std::vector<double> acc(b.cols());
    matmul_kernel(a.values().data(), b.values().data(), out.values().data(), acc.data(), a.rows(), a.cols(),
                  b.cols());
    require_finite(out, "matmul");
    return out;
}

DenseMatrix matmul_bt(const DenseMatrix& a, const DenseMatrix& b)
{
    if (a.cols() != b.cols()) {
        shape_mismatch("matmul_bt", a.shape_string(), b.shape_string() + "^T");
    }
    return matmul(a, transpose(b));
}

DenseMatrix matmul_at(const DenseMatrix& a, const DenseMatrix& b)
{
    if (a.rows() != b.rows()) {
        shape_mismatch("matmul_at", a.shape_string() + "^T", b.shape_string());
    }
    const std::size_t m = a.cols();
    const std::size_t p = b.cols();
    std::vector<double> acc(m * p, 0.0);
    matmul_at_kernel(a.values().data(), b.values().data(), acc.data(), a.rows(), m, p);
    DenseMatrix out(m, p);
    std::transform(acc.begin(), acc.end(), out.values().begin(),
                   [](double v) { return static_cast<float>(v); });
    require_finite(out, "matmul_at");
    return out;
}

DenseMatrix transpose(const DenseMatrix& m)
{
    DenseMatrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(j, i) = m(i, j);
        }
    }
    return out;
}

CsrMatrix csr_from_dense(const DenseMatrix& m)
{
    CsrMatrix s;
    s.rows = m.rows();
    s.cols = m.cols();
    s.row_ptr.assign(1, 0);
    s.row_ptr.reserve(m.rows() + 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto row = m.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (row[j] != 0.0f) {
                s.col_idx.push_back(static_cast<std::uint32_t>(j));
                s.values.push_back(row[j]);
            }
        }
        s.row_ptr.push_back(s.values.size());
    }
    return s;
}

DenseMatrix dense_from_csr(const CsrMatrix& s)
{
    DenseMatrix m(s.rows, s.cols);
    for (std::size_t i = 0; i < s.rows; ++i) {
        for (auto p = s.row_ptr[i]; p < s.row_ptr[i + 1]; ++p) {
            m(i, s.col_idx[p]) = s.values[p];
        }
    }
    return m;
}

DenseMatrix csr_matmul(const CsrMatrix& s, const DenseMatrix& d)
{
    if (s.cols != d.rows()) {
        shape_mismatch("csr_matmul", shape_of(s.rows, s.cols), d.shape_string());
    }
    DenseMatrix out(s.rows, d.cols());
    std::vector<double> acc(d.cols());
    csr_matmul_kernel(s, d.values().data(), out.values().data(), acc.data(), d.cols());
    require_finite(out, "csr_matmul");
    return out;
}

void accumulate_column_squares(const DenseMatrix& x, std::span<double> sums)
{
    if (sums.size() != x.cols()) {
        throw std::invalid_argument("accumulate_column_squares: " + std::to_string(sums.size()) +
                                    " sums for " + x.shape_string());
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto row = x.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double v = row[j];
            sums[j] += v * v;
        }
    }
}

std::vector<float> column_l2_norms(const DenseMatrix& x)
{
    if (x.rows() == 0) {
        throw std::invalid_argument("column_l2_norms: input has no rows");
    }
    std::vector<double> sums(x.cols(), 0.0);
    accumulate_column_squares(x, sums);
    std::vector<float> out(x.cols());
    std::transform(sums.begin(), sums.end(), out.begin(),
                   [](double s) { return static_cast<float>(std::sqrt(s)); });
    return out;
}

std::size_t count_nonzero(std::span<const float> values) noexcept
{
    return static_cast<std::size_t>(
        std::count_if(values.begin(), values.end(), [](float v) { return v != 0.0f; }));
}

bool all_finite(std::span<const float> values) noexcept
{
    return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

void require_finite(const DenseMatrix& m, const std::string& what)
{
    if (!all_finite(m.values())) {
        throw NumericError(what + ": non-finite value in " + m.shape_string() + " result");
    }
}

} // namespace shears
