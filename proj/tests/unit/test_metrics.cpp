// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "shears/metrics.hpp"
#include "shears/pruning.hpp"

#include "../common/test_util.hpp"

using namespace shears;

namespace {

struct Counts {
    std::size_t total;
    std::size_t target;
};

// Closed form for the architecture: embedding, head, and per block
// four d×d attention projections plus three d×d_ff feed-forward ones.
Counts closed_form(const ModelConfig& c)
{
    const std::size_t target = c.n_blocks * (4 * c.d_model * c.d_model + 3 * c.d_model * c.d_ff);
    return {c.vocab_size * c.d_model + c.d_model * c.n_classes + target, target};
}

Model pruned_model(const ModelConfig& cfg, double sparsity, std::uint64_t seed)
{
    Rng rng(seed);
    const Model m = init_model(cfg, rng);
    return sparsify_model(m, {test::random_batch(cfg, 8, seed + 1)}, m.module_names(), sparsity,
                          PruneMethod::Wanda)
        .first;
}

} // namespace

TEST_SUITE("metrics")
{
    TEST_CASE("a dense model counts every parameter as non-zero")
    {
        ModelConfig cfg;
        Rng rng(1);
        const Model m = init_model(cfg, rng);
        const auto r = count_params(m);
        CHECK(r.base_total == closed_form(cfg).total);
        CHECK(r.target_total == closed_form(cfg).target);
        CHECK(r.base_nonzero == r.base_total);
        CHECK(r.global_total == r.base_total);
        CHECK(r.nonzero_reduction() == 1.0);
        CHECK(r.base_sparsity() == 0.0);
    }

    TEST_CASE("half-sparse targets match the closed-form ratio exactly")
    {
        for (std::size_t blocks : {1u, 2u, 3u}) {
            ModelConfig cfg;
            cfg.n_blocks = blocks;
            const auto cf = closed_form(cfg);
            const Model p = pruned_model(cfg, 0.5, blocks);
            const auto r = count_params(p);
            CHECK(r.target_nonzero == cf.target / 2);
            CHECK(r.base_nonzero == cf.total - cf.target / 2);
            const double f = double(cf.target) / double(cf.total);
            CHECK(r.nonzero_reduction() == doctest::Approx(1.0 / (1.0 - 0.5 * f)).epsilon(1e-12));
            CHECK(r.base_sparsity() == doctest::Approx(0.5 * f).epsilon(1e-12));
        }
    }

    TEST_CASE("desk configuration ratio lies in [1.8, 2.0]")
    {
        ModelConfig cfg;
        const auto cf = closed_form(cfg);
        CHECK(double(cf.target) / double(cf.total) > 0.95);
        const auto r = count_params(pruned_model(cfg, 0.5, 7));
        CHECK(r.nonzero_reduction() >= 1.8);
        CHECK(r.nonzero_reduction() <= 2.0);
    }

    TEST_CASE("adapter accounting")
    {
        ModelConfig cfg;
        const Model p = pruned_model(cfg, 0.5, 3);
        Rng rng(4);
        auto ad = attach(p, p.module_names(), kDefaultRankChoices, kDefaultAlpha, rng);
        const auto hc = minimal_config(ad);
        std::size_t expect = 0;
        std::size_t a_entries = 0;
        for (const auto& mod : ad.modules) {
            expect += 16 * (mod.a.cols() + mod.b.rows());
            a_entries += 16 * mod.a.cols();
        }
        const auto fresh = count_params(p, &ad, &hc, true);
        CHECK(fresh.adapter_active_params == expect);
        // B is zero at init, A is dense.
        CHECK(fresh.adapter_nonzero == a_entries);
        CHECK(fresh.global_total == fresh.base_total + expect);
        CHECK(fresh.global_nonzero == fresh.base_nonzero + a_entries);
        // Merging a zero adapter leaves the base counts exactly as they were.
        CHECK(*fresh.merged_nonzero == count_params(p).base_nonzero);

        test::randomize_b(ad, 0.01, 5);
        const auto trained = count_params(p, &ad, &hc, true);
        CHECK(*trained.merged_nonzero > trained.base_nonzero);
        CHECK(*trained.merged_target_sparsity < 0.01);
    }

    TEST_CASE("argument consistency")
    {
        const Model m = test::small_model(1);
        Rng rng(1);
        const auto ad = attach(m, m.module_names(), {4, 2}, 4.0, rng);
        const auto c = maximal_config(ad);
        CHECK_THROWS_AS((void)count_params(m, &ad, nullptr), std::invalid_argument);
        CHECK_THROWS_AS((void)count_params(m, nullptr, &c), std::invalid_argument);
        CHECK_THROWS_AS((void)count_params(m, nullptr, nullptr, true), std::invalid_argument);
    }

    TEST_CASE("benchmark paths agree and report every batch size")
    {
        ModelConfig cfg;
        const Model p = pruned_model(cfg, 0.5, 9);
        Rng rng(10);
        auto ad = attach(p, p.module_names(), kDefaultRankChoices, kDefaultAlpha, rng);
        test::randomize_b(ad, 0.05, 11);
        const auto hc = maximal_config(ad);
        const auto rep = bench_inference(p, &ad, &hc, {1, 8}, 3, 1);
        REQUIRE(rep.entries.size() == 2);
        CHECK(rep.repetitions == 3);
        CHECK(rep.target_sparsity == doctest::Approx(0.5));
        for (const auto& e : rep.entries) {
            CHECK(e.max_abs_diff < 1e-4);
            CHECK(e.dense_median_ms > 0.0);
            CHECK(e.csr_median_ms > 0.0);
        }
        CHECK_THROWS_AS((void)bench_inference(p, nullptr, nullptr, {1}, 2), std::invalid_argument);
    }

    TEST_CASE("benchmark on a dense model still runs")
    {
        ModelConfig cfg;
        Rng rng(12);
        const Model m = init_model(cfg, rng);
        const auto rep = bench_inference(m, nullptr, nullptr, {4}, 3);
        CHECK(rep.target_sparsity == 0.0);
        CHECK(rep.entries.at(0).max_abs_diff < 1e-4);
    }
}
