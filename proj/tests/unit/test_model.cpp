// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "shears/adapters.hpp"
#include "shears/error.hpp"
#include "shears/model.hpp"
#include "shears/sparse_forward.hpp"

#include "../common/test_util.hpp"

using namespace shears;

TEST_SUITE("model")
{
    TEST_CASE("init is deterministic and centred")
    {
        ModelConfig cfg;
        Rng a(1);
        Rng b(1);
        const Model m1 = init_model(cfg, a);
        const Model m2 = init_model(cfg, b);
        CHECK(m1.embedding.bit_equal(m2.embedding));
        CHECK(m1.head.bit_equal(m2.head));
        for (std::size_t i = 0; i < m1.modules.size(); ++i) {
            CHECK(m1.modules[i].weight.bit_equal(m2.modules[i].weight));
        }
        Rng c(2);
        const Model m3 = init_model(cfg, c);
        CHECK_FALSE(m1.modules[0].weight.bit_equal(m3.modules[0].weight));

        double sum = 0.0;
        std::size_t n = 0;
        auto add = [&](const DenseMatrix& m) {
            for (float v : m.values()) {
                sum += v;
                ++n;
            }
        };
        add(m1.embedding);
        add(m1.head);
        for (const auto& mod : m1.modules) {
            add(mod.weight);
        }
        CHECK(std::fabs(sum / static_cast<double>(n)) < 0.01);
    }

    TEST_CASE("module naming and shapes")
    {
        ModelConfig cfg;
        Rng rng(0);
        const Model m = init_model(cfg, rng);
        const auto names = m.module_names();
        REQUIRE(names.size() == 14);
        CHECK(names[0] == "b0.q");
        CHECK(names[4] == "b0.up");
        CHECK(names[13] == "b1.down");
        CHECK(m.module("b0.up").weight.rows() == cfg.d_ff);
        CHECK(m.module("b0.up").weight.cols() == cfg.d_model);
        CHECK(m.module("b1.down").weight.rows() == cfg.d_model);
        CHECK(m.module("b1.down").weight.cols() == cfg.d_ff);
        CHECK_THROWS_AS((void)m.module("b2.q"), std::invalid_argument);
    }

    TEST_CASE("forward is pure and row-consistent")
    {
        const Model m = test::small_model(3);
        Batch b = test::random_batch(m.config, 6, 4);
        const auto l1 = forward(m, b);
        const auto l2 = forward(m, b);
        CHECK(l1.bit_equal(l2));
        CHECK(l1.rows() == 6);
        CHECK(l1.cols() == m.config.n_classes);

        Batch dup;
        dup.seq_len = m.config.seq_len;
        for (int i = 0; i < 2; ++i) {
            dup.tokens.insert(dup.tokens.end(), b.tokens.begin(), b.tokens.begin() + m.config.seq_len);
            dup.labels.push_back(0);
        }
        const auto d = forward(m, dup);
        for (std::size_t j = 0; j < d.cols(); ++j) {
            CHECK(std::bit_cast<std::uint32_t>(d(0, j)) == std::bit_cast<std::uint32_t>(d(1, j)));
        }
    }

    TEST_CASE("invalid batches are rejected")
    {
        const Model m = test::small_model(1);
        Batch b = test::random_batch(m.config, 2, 1);
        b.tokens[0] = static_cast<std::uint32_t>(m.config.vocab_size);
        CHECK_THROWS_AS((void)forward(m, b), std::invalid_argument);
        Batch c = test::random_batch(m.config, 2, 1);
        c.labels[0] = static_cast<std::uint32_t>(m.config.n_classes);
        CHECK_THROWS_AS((void)forward(m, c), std::invalid_argument);
        Batch d = test::random_batch(m.config, 2, 1);
        d.seq_len += 1;
        CHECK_THROWS_AS((void)forward(m, d), std::invalid_argument);
    }

    TEST_CASE("fresh adapters leave every output bit-identical")
    {
        const Model m = test::small_model(5);
        Rng rng(6);
        const SuperAdapter ad = attach(m, m.module_names(), kDefaultRankChoices, kDefaultAlpha, rng);
        for (const auto& config : {maximal_config(ad), minimal_config(ad)}) {
            for (int t = 0; t < 10; ++t) {
                const Batch b = test::random_batch(m.config, 4, 100 + t);
                CHECK(forward(m, b, {&ad, &config}).bit_equal(forward(m, b)));
            }
        }
    }

    TEST_CASE("adapter view contract")
    {
        const Model m = test::small_model(5);
        Rng rng(6);
        const SuperAdapter ad = attach(m, {"b0.q"}, kDefaultRankChoices, kDefaultAlpha, rng);
        const Batch b = test::random_batch(m.config, 2, 1);
        SubAdapterConfig bad_rank{{"b0.q", 20}};
        CHECK_THROWS_AS((void)forward(m, b, {&ad, &bad_rank}), std::invalid_argument);
        SubAdapterConfig unknown{{"b0.zz", 16}};
        CHECK_THROWS_AS((void)forward(m, b, {&ad, &unknown}), std::invalid_argument);
        SubAdapterConfig ok{{"b0.q", 16}};
        CHECK_THROWS_AS((void)forward(m, b, {nullptr, &ok}), std::invalid_argument);
    }

    TEST_CASE("loss values")
    {
        const DenseMatrix uniform(3, 4, 0.5f);
        CHECK(loss(uniform, {0, 1, 3}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
        DenseMatrix sharp(2, 4);
        sharp(0, 2) = 20.0f;
        sharp(1, 1) = 20.0f;
        CHECK(loss(sharp, {2, 1}) < 1e-6);
        CHECK(loss(sharp, {2, 1}) >= 0.0);
        CHECK_THROWS_AS((void)loss(uniform, {0, 1, 4}), std::invalid_argument);
        CHECK_THROWS_AS((void)loss(uniform, {0, 1}), std::invalid_argument);

        Rng rng(8);
        const auto logits = DenseMatrix::gaussian(20, 5, 3.0, rng);
        std::vector<std::uint32_t> labels;
        for (int i = 0; i < 20; ++i) {
            labels.push_back(static_cast<std::uint32_t>(rng.uniform_index(5)));
        }
        long double total = 0.0L;
        for (std::size_t i = 0; i < 20; ++i) {
            long double z = 0.0L;
            for (std::size_t j = 0; j < 5; ++j) {
                z += std::exp(static_cast<long double>(logits(i, j)));
            }
            total += std::log(z) - logits(i, labels[i]);
        }
        CHECK(std::fabs(loss(logits, labels) - static_cast<double>(total / 20.0L)) < 1e-6);
    }

    TEST_CASE("accuracy counts argmax hits")
    {
        const DenseMatrix logits{{1, 3, 2}, {5, 0, 0}, {0, 0, 1}};
        CHECK(accuracy(logits, {1, 0, 0}) == doctest::Approx(2.0 / 3.0));
    }

    TEST_CASE("single-token calibration matches a hand trace")
    {
        ModelConfig cfg = test::small_config();
        cfg.seq_len = 1;
        Rng rng(4);
        const Model m = init_model(cfg, rng);
        Batch b;
        b.seq_len = 1;
        b.tokens = {3};
        b.labels = {0};
        const auto norms = capture_activations(m, {b}, {"b0.q"});
        // Position 0: sin(0) = 0 on even features, cos(0) = 1 on odd ones.
        std::vector<double> x(cfg.d_model);
        double ss = 0.0;
        for (std::size_t j = 0; j < cfg.d_model; ++j) {
            x[j] = m.embedding(3, j) + (j % 2 == 1 ? cfg.position_scale : 0.0);
            ss += x[j] * x[j];
        }
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(cfg.d_model) + 1e-6);
        const auto& got = norms.at("b0.q");
        REQUIRE(got.size() == cfg.d_model);
        for (std::size_t j = 0; j < cfg.d_model; ++j) {
            CHECK(std::fabs(got[j] - std::fabs(x[j] * inv)) < 1e-5);
        }
    }

    TEST_CASE("calibration norms: duplication and partitioning")
    {
        const Model m = test::small_model(2);
        const Batch eight = test::random_batch(m.config, 8, 3);
        const auto names = m.module_names();
        const auto once = capture_activations(m, {eight}, names);
        const auto twice = capture_activations(m, {eight, eight}, names);
        const auto split = capture_activations(m, {eight.slice(0, 4), eight.slice(4, 8)}, names);
        for (const auto& name : names) {
            const auto& a = once.at(name);
            REQUIRE(a.size() == m.module(name).weight.cols());
            for (std::size_t j = 0; j < a.size(); ++j) {
                CHECK(std::fabs(twice.at(name)[j] - std::sqrt(2.0) * a[j]) <= 1e-5 * (1.0 + a[j]));
                CHECK(std::fabs(split.at(name)[j] - a[j]) <= 1e-5);
            }
        }
        CHECK_THROWS_AS((void)capture_activations(m, {}, names), std::invalid_argument);
        CHECK_THROWS_AS((void)capture_activations(m, {eight}, {"nope"}), std::invalid_argument);
    }

    TEST_CASE("adapter gradients match central differences")
    {
        const auto result = test::gradient_check(11, 120);
        CHECK(result.checked >= 120);
        CHECK(result.max_rel_error < 2e-2);
    }

    TEST_CASE("zero B gives exactly zero A gradients; only active slices are returned")
    {
        const Model m = test::small_model(7);
        Rng rng(8);
        const SuperAdapter ad = attach(m, m.module_names(), {8, 4}, 8.0, rng);
        SubAdapterConfig cfg = maximal_config(ad);
        cfg["b0.k"] = 4;
        const Batch b = test::random_batch(m.config, 4, 9);
        const auto g = adapter_gradients(m, ad, cfg, b);
        for (const auto& [name, ga] : g.a) {
            CHECK(count_nonzero(ga.values()) == 0);
            CHECK(ga.rows() == cfg.at(name));
            CHECK(g.b.at(name).cols() == cfg.at(name));
        }
        CHECK(g.a.at("b0.k").rows() == 4);
        CHECK(g.loss == doctest::Approx(loss(forward(m, b), b.labels)).epsilon(1e-9));
    }

    TEST_CASE("sparse forward agrees with dense forward")
    {
        Model m = test::small_model(12);
        for (auto& mod : m.modules) {
            for (std::size_t i = 0; i < mod.weight.size(); i += 2) {
                mod.weight.values()[i] = 0.0f;
            }
        }
        Rng rng(13);
        SuperAdapter ad = attach(m, m.module_names(), {8, 4}, 8.0, rng);
        test::randomize_b(ad, 0.1, 14);
        const auto cfg = maximal_config(ad);
        const Batch b = test::random_batch(m.config, 5, 15);
        const auto sparse = build_sparse_weights(m);
        CHECK(test::max_abs_diff(forward_sparse(m, sparse, b, {&ad, &cfg}), forward(m, b, {&ad, &cfg})) < 1e-5);
    }

    TEST_CASE("frozen hash detects any change to target weights")
    {
        Model m = test::small_model(1);
        CHECK_THROWS_AS(require_frozen(m), ArtifactError);
        freeze(m);
        REQUIRE(m.frozen_hash);
        CHECK(m.frozen_hash->size() == 64);
        CHECK_NOTHROW(require_frozen(m));
        m.embedding(0, 0) += 1.0f;
        CHECK_NOTHROW(require_frozen(m));
        m.modules[3].weight(1, 1) = std::nextafter(m.modules[3].weight(1, 1), 1.0f);
        CHECK_THROWS_AS(require_frozen(m), ArtifactError);
    }

    TEST_CASE("hash covers float32 little-endian payloads in module order")
    {
        Model m = test::small_model(0);
        for (auto& mod : m.modules) {
            for (auto& v : mod.weight.values()) {
                v = 1.0f;
            }
        }
        // 1024 target floats of 1.0f, bytes 00 00 80 3F each; digest from Python hashlib.
        CHECK(target_weights_hash(m) == "e9bac255f4adc7cb4ada9298e193a5ff66b434d15afabd458505325f29c398c7");
    }

    TEST_CASE("tiny model logits match the frozen golden file")
    {
        std::ifstream in(std::string(SHEARS_TEST_DATA_DIR) + "/golden_tiny_logits.json");
        REQUIRE(in.good());
        const auto golden = nlohmann::json::parse(in);
        const auto model = test::golden_model();
        const auto batch = test::golden_batch();
        const auto logits = forward(model, batch);
        const auto expected = golden.at("logits").get<std::vector<std::vector<float>>>();
        REQUIRE(expected.size() == logits.rows());
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            for (std::size_t j = 0; j < logits.cols(); ++j) {
                CHECK(std::fabs(logits(i, j) - expected[i][j]) < 1e-6);
            }
        }
    }
}
