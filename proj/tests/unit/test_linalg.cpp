// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "shears/error.hpp"
#include "shears/linalg.hpp"
#include "shears/rng.hpp"

using namespace shears;

namespace {

DenseMatrix naive_product(const DenseMatrix& a, const DenseMatrix& b)
{
    DenseMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double acc = 0.0L;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += static_cast<long double>(a(i, k)) * b(k, j);
            }
            out(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

DenseMatrix random_sparse(std::size_t r, std::size_t c, double zero_fraction, Rng& rng)
{
    DenseMatrix m = DenseMatrix::gaussian(r, c, 1.0, rng);
    for (auto& v : m.values()) {
        if (rng.uniform() < zero_fraction) {
            v = 0.0f;
        }
    }
    return m;
}

void check_close(const DenseMatrix& a, const DenseMatrix& b, double tol)
{
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(std::fabs(static_cast<double>(a.values()[i]) - b.values()[i]) <= tol);
    }
}

} // namespace

TEST_SUITE("linalg")
{
    TEST_CASE("matmul small cases")
    {
        const DenseMatrix m{{1, 2}, {3, 4}};
        CHECK(matmul(DenseMatrix::identity(2), m).bit_equal(m));
        const DenseMatrix r = matmul(DenseMatrix{{1, 2}}, DenseMatrix{{3}, {4}});
        CHECK(r.rows() == 1);
        CHECK(r.cols() == 1);
        CHECK(r(0, 0) == 11.0f);
    }

    TEST_CASE("matmul matches the naive loop")
    {
        Rng rng(1);
        for (int t = 0; t < 20; ++t) {
            const auto a = DenseMatrix::gaussian(5 + t % 3, 7 + t % 5, 1.0, rng);
            const auto b = DenseMatrix::gaussian(a.cols(), 3 + t % 4, 1.0, rng);
            check_close(matmul(a, b), naive_product(a, b), 1e-6);
            check_close(matmul_bt(a, transpose(b)), naive_product(a, b), 1e-6);
            check_close(matmul_at(transpose(a), b), naive_product(a, b), 1e-6);
        }
    }

    TEST_CASE("matmul rejects mismatched shapes and names both")
    {
        const DenseMatrix a(2, 3);
        const DenseMatrix b(4, 2);
        try {
            (void)matmul(a, b);
            FAIL("expected an exception");
        } catch (const std::invalid_argument& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[2x3]") != std::string::npos);
            CHECK(msg.find("[4x2]") != std::string::npos);
        }
        CHECK_THROWS_AS((void)matmul_bt(a, b), std::invalid_argument);
        CHECK_THROWS_AS((void)matmul_at(a, b), std::invalid_argument);
    }

    TEST_CASE("matmul reports non-finite results")
    {
        const float big = std::numeric_limits<float>::max();
        const DenseMatrix a{{big, big}};
        const DenseMatrix b{{big}, {big}};
        CHECK_THROWS_AS((void)matmul(a, b), NumericError);
    }

    TEST_CASE("csr construction")
    {
        const auto z = csr_from_dense(DenseMatrix(3, 3));
        CHECK(z.nnz() == 0);
        CHECK(z.row_ptr == std::vector<std::size_t>{0, 0, 0, 0});

        const auto s = csr_from_dense(DenseMatrix{{0, 5}, {7, 0}});
        CHECK(s.row_ptr == std::vector<std::size_t>{0, 1, 2});
        CHECK(s.col_idx == std::vector<std::uint32_t>{1, 0});
        CHECK(s.values == std::vector<float>{5, 7});
    }

    TEST_CASE("csr round trip and structural invariants")
    {
        Rng rng(2);
        for (int t = 0; t < 50; ++t) {
            const auto m = random_sparse(1 + t % 9, 1 + t % 13, 0.5, rng);
            const auto s = csr_from_dense(m);
            CHECK(s.nnz() == count_nonzero(m.values()));
            CHECK(dense_from_csr(s).bit_equal(m));
            REQUIRE(s.row_ptr.size() == m.rows() + 1);
            CHECK(s.row_ptr.front() == 0);
            CHECK(s.row_ptr.back() == s.nnz());
            for (std::size_t i = 0; i < m.rows(); ++i) {
                CHECK(s.row_ptr[i] <= s.row_ptr[i + 1]);
                for (auto p = s.row_ptr[i]; p + 1 < s.row_ptr[i + 1]; ++p) {
                    CHECK(s.col_idx[p] < s.col_idx[p + 1]);
                }
            }
            for (float v : s.values) {
                CHECK(v != 0.0f);
            }
        }
    }

    TEST_CASE("csr_matmul equals the dense product")
    {
        Rng rng(3);
        const auto eye = csr_from_dense(DenseMatrix::identity(3));
        const auto d = DenseMatrix::gaussian(3, 4, 1.0, rng);
        CHECK(csr_matmul(eye, d).bit_equal(d));
        const auto zero = csr_matmul(csr_from_dense(DenseMatrix(3, 3)), d);
        CHECK(count_nonzero(zero.values()) == 0);

        const auto w = random_sparse(64, 64, 0.6, rng);
        const auto x = DenseMatrix::gaussian(64, 8, 1.0, rng);
        check_close(csr_matmul(csr_from_dense(w), x), naive_product(w, x), 1e-5);

        for (int t = 0; t < 1000; ++t) {
            const std::size_t r = 1 + rng.uniform_index(12);
            const std::size_t k = 1 + rng.uniform_index(12);
            const std::size_t c = 1 + rng.uniform_index(6);
            const auto a = random_sparse(r, k, rng.uniform(), rng);
            const auto b = DenseMatrix::gaussian(k, c, 1.0, rng);
            check_close(csr_matmul(csr_from_dense(a), b), matmul(a, b), 1e-5);
        }
        CHECK_THROWS_AS((void)csr_matmul(eye, DenseMatrix(2, 2)), std::invalid_argument);
    }

    TEST_CASE("column norms")
    {
        const auto n = column_l2_norms(DenseMatrix{{3}, {4}});
        REQUIRE(n.size() == 1);
        CHECK(n[0] == 5.0f);
        for (float v : column_l2_norms(DenseMatrix(4, 3))) {
            CHECK(v == 0.0f);
        }
        CHECK_THROWS_AS((void)column_l2_norms(DenseMatrix(0, 3)), std::invalid_argument);

        Rng rng(4);
        const auto x = DenseMatrix::gaussian(10, 4, 1.0, rng);
        const auto got = column_l2_norms(x);
        for (std::size_t j = 0; j < 4; ++j) {
            double ss = 0.0;
            for (std::size_t i = 0; i < 10; ++i) {
                ss += static_cast<double>(x(i, j)) * x(i, j);
            }
            CHECK(std::fabs(got[j] - std::sqrt(ss)) < 1e-6);
        }
    }

    TEST_CASE("gaussian is reproducible and roughly calibrated")
    {
        Rng a(9);
        Rng b(9);
        CHECK(DenseMatrix::gaussian(30, 30, 0.02, a).bit_equal(DenseMatrix::gaussian(30, 30, 0.02, b)));
        Rng c(10);
        const auto m = DenseMatrix::gaussian(200, 200, 0.02, c);
        double ss = 0.0;
        for (float v : m.values()) {
            ss += static_cast<double>(v) * v;
        }
        CHECK(std::fabs(std::sqrt(ss / m.size()) - 0.02) < 0.001);
    }

    TEST_CASE("constructor validates value count")
    {
        CHECK_THROWS_AS(DenseMatrix(2, 2, std::vector<float>{1, 2, 3}), std::invalid_argument);
        CHECK_THROWS_AS((DenseMatrix{{1, 2}, {3}}), std::invalid_argument);
    }
}
