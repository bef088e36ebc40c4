// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "shears/pruning.hpp"

#include "../common/test_util.hpp"

using namespace shears;

namespace {

// Full sort by (score ascending, column descending); zero the first floor(s*cols).
DenseMatrix full_sort_oracle(const DenseMatrix& w, const DenseMatrix& scores, double s)
{
    DenseMatrix out = w;
    const auto n = static_cast<std::size_t>(std::floor(s * static_cast<double>(w.cols())));
    for (std::size_t i = 0; i < w.rows(); ++i) {
        std::vector<std::size_t> idx(w.cols());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if (scores(i, a) != scores(i, b)) {
                return scores(i, a) < scores(i, b);
            }
            return a > b;
        });
        for (std::size_t t = 0; t < n; ++t) {
            out(i, idx[t]) = 0.0f;
        }
    }
    return out;
}

std::vector<Batch> calib_for(const Model& m, std::uint64_t seed)
{
    return {test::random_batch(m.config, 8, seed)};
}

} // namespace

TEST_SUITE("pruning")
{
    TEST_CASE("wanda scores by hand")
    {
        const DenseMatrix w{{1, -3}, {3, 0.5f}};
        const auto s = wanda_scores(w, std::vector<float>{2, 1});
        CHECK(s.bit_equal(DenseMatrix{{2, 3}, {6, 0.5f}}));
        const auto mag = wanda_scores(w, std::vector<float>{1, 1});
        CHECK(mag.bit_equal(DenseMatrix{{1, 3}, {3, 0.5f}}));
        const auto z = wanda_scores(DenseMatrix{{0, 1}}, std::vector<float>{100, 1});
        CHECK(z(0, 0) == 0.0f);
        CHECK_THROWS_AS((void)wanda_scores(w, std::vector<float>{1}), std::invalid_argument);
        CHECK_THROWS_AS((void)wanda_scores(w, std::vector<float>{1, -1}), std::invalid_argument);
    }

    TEST_CASE("prune_rows by hand")
    {
        const DenseMatrix w{{1, -3}, {3, 0.5f}};
        const DenseMatrix s{{2, 3}, {6, 0.5f}};
        CHECK(prune_rows(w, s, 0.5).bit_equal(DenseMatrix{{0, -3}, {3, 0}}));
        CHECK(prune_rows(w, s, 0.0).bit_equal(w));
        CHECK_THROWS_AS((void)prune_rows(w, s, 1.0), std::invalid_argument);
        CHECK_THROWS_AS((void)prune_rows(w, s, -0.1), std::invalid_argument);
        CHECK_THROWS_AS((void)prune_rows(w, DenseMatrix(2, 3), 0.5), std::invalid_argument);
    }

    TEST_CASE("ties prune the larger column first")
    {
        const DenseMatrix w{{1, 2, 3, 4}};
        const DenseMatrix s{{1, 1, 1, 1}};
        CHECK(prune_rows(w, s, 0.5).bit_equal(DenseMatrix{{1, 2, 0, 0}}));
        CHECK(prune_rows(w, s, 0.25).bit_equal(DenseMatrix{{1, 2, 3, 0}}));
    }

    TEST_CASE("prune_rows equals the full-sort oracle")
    {
        Rng rng(1);
        for (int t = 0; t < 200; ++t) {
            const std::size_t r = 1 + rng.uniform_index(16);
            const std::size_t c = 1 + rng.uniform_index(24);
            const auto w = DenseMatrix::gaussian(r, c, 1.0, rng);
            DenseMatrix s(r, c);
            for (auto& v : s.values()) {
                // Coarse values force frequent ties.
                v = static_cast<float>(rng.uniform_index(4));
            }
            const double sp = rng.uniform() * 0.99;
            CHECK(prune_rows(w, s, sp).bit_equal(full_sort_oracle(w, s, sp)));
        }
    }

    TEST_CASE("exact per-row counts and surviving bits")
    {
        Rng rng(2);
        const auto w = DenseMatrix::gaussian(16, 16, 1.0, rng);
        const auto s = wanda_scores(w, std::vector<float>(16, 1.0f));
        for (double sp : {0.1, 0.4, 0.5, 0.7, 0.95}) {
            const auto p = prune_rows(w, s, sp);
            for (auto z : row_zero_counts(p)) {
                CHECK(z == prune_count(sp, 16));
            }
            for (std::size_t i = 0; i < p.size(); ++i) {
                const float v = p.values()[i];
                CHECK((v == 0.0f || std::bit_cast<std::uint32_t>(v) == std::bit_cast<std::uint32_t>(w.values()[i])));
            }
        }
        CHECK(prune_count(0.5, 7) == 3);
        CHECK(prune_count(0.0, 7) == 0);
    }

    TEST_CASE("sparsify_model: exact report, untouched embedding and head, frozen")
    {
        ModelConfig cfg;
        Rng rng(3);
        const Model m = init_model(cfg, rng);
        const auto [p, report] = sparsify_model(m, calib_for(m, 4), m.module_names(), 0.5, PruneMethod::Wanda);
        CHECK(report.target_sparsity == 0.5);
        CHECK(report.modules.size() == m.modules.size());
        for (const auto& mod : report.modules) {
            CHECK(mod.min_row_zeros == mod.cols / 2);
            CHECK(mod.max_row_zeros == mod.cols / 2);
        }
        CHECK(p.embedding.bit_equal(m.embedding));
        CHECK(p.head.bit_equal(m.head));
        REQUIRE(p.frozen_hash);
        CHECK_NOTHROW(require_frozen(p));
        CHECK_FALSE(m.frozen_hash);
    }

    TEST_CASE("sparsify_model errors")
    {
        const Model m = test::small_model(1);
        CHECK_THROWS_AS((void)sparsify_model(m, calib_for(m, 1), {}, 0.5, PruneMethod::Wanda), std::invalid_argument);
        CHECK_THROWS_AS((void)sparsify_model(m, calib_for(m, 1), {"b9.q"}, 0.5, PruneMethod::Wanda),
                        std::invalid_argument);
        CHECK_THROWS_AS((void)sparsify_model(m, {}, {"b0.q"}, 0.5, PruneMethod::Wanda), std::invalid_argument);
        CHECK_NOTHROW((void)sparsify_model(m, {}, {"b0.q"}, 0.5, PruneMethod::Magnitude));
    }

    TEST_CASE("pruning is idempotent")
    {
        const Model m = test::small_model(5);
        const auto calib = calib_for(m, 6);
        for (auto method : {PruneMethod::Wanda, PruneMethod::Magnitude}) {
            const auto once = sparsify_model(m, calib, m.module_names(), 0.5, method).first;
            const auto twice = sparsify_model(once, calib, m.module_names(), 0.5, method).first;
            for (std::size_t i = 0; i < once.modules.size(); ++i) {
                CHECK(once.modules[i].weight.bit_equal(twice.modules[i].weight));
            }
        }
    }

    TEST_CASE("support is invariant to scaling the norms")
    {
        Rng rng(7);
        const auto w = DenseMatrix::gaussian(12, 20, 1.0, rng);
        std::vector<float> norms(20);
        for (auto& n : norms) {
            n = static_cast<float>(rng.uniform() + 0.1);
        }
        std::vector<float> scaled = norms;
        for (auto& n : scaled) {
            n *= 4.0f;  // a power of two keeps every product exact
        }
        const auto a = prune_rows(w, wanda_scores(w, norms), 0.5);
        const auto b = prune_rows(w, wanda_scores(w, scaled), 0.5);
        CHECK(a.bit_equal(b));
    }

    TEST_CASE("wanda equals magnitude under equal activation norms")
    {
        const Model m = test::small_model(8);
        const auto w = m.module("b0.up").weight;
        const std::vector<float> equal(w.cols(), 0.37f);
        CHECK(prune_rows(w, wanda_scores(w, equal), 0.5).bit_equal(
            prune_rows(w, wanda_scores(w, std::vector<float>(w.cols(), 1.0f)), 0.5)));
    }

    TEST_CASE("wanda and magnitude differ on a real model")
    {
        int differing_seeds = 0;
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            ModelConfig cfg;
            Rng rng(seed);
            const Model m = init_model(cfg, rng);
            const auto calib = calib_for(m, seed + 10);
            const auto a = sparsify_model(m, calib, m.module_names(), 0.5, PruneMethod::Wanda).first;
            const auto b = sparsify_model(m, calib, m.module_names(), 0.5, PruneMethod::Magnitude).first;
            bool differ = false;
            for (std::size_t i = 0; i < a.modules.size() && !differ; ++i) {
                differ = !a.modules[i].weight.bit_equal(b.modules[i].weight);
            }
            differing_seeds += differ ? 1 : 0;
        }
        CHECK(differing_seeds == 3);
    }

    TEST_CASE("method names round trip")
    {
        CHECK(parse_prune_method("wanda") == PruneMethod::Wanda);
        CHECK(parse_prune_method(prune_method_name(PruneMethod::Magnitude)) == PruneMethod::Magnitude);
        CHECK_THROWS_AS((void)parse_prune_method("sparsegpt"), std::invalid_argument);
    }
}
