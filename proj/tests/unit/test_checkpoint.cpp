// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "shears/checkpoint.hpp"
#include "shears/error.hpp"
#include "shears/tensor_io.hpp"

#include "../common/test_util.hpp"

using namespace shears;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name)
    {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Model frozen_pruned(std::uint64_t seed)
{
    const Model m = test::small_model(seed, 2);
    return sparsify_model(m, {test::random_batch(m.config, 4, seed)}, m.module_names(), 0.5, PruneMethod::Wanda)
        .first;
}

} // namespace

TEST_SUITE("checkpoint")
{
    TEST_CASE("model round trip is bit-exact and keeps the frozen hash")
    {
        TempDir dir("shears_test_ckpt_model");
        const Model m = frozen_pruned(1);
        save_model(m, dir.path, PruneInfo{PruneMethod::Wanda, 0.5, m.module_names()});
        const auto loaded = load_model(dir.path);
        CHECK(loaded.model.config == m.config);
        CHECK(loaded.model.embedding.bit_equal(m.embedding));
        CHECK(loaded.model.head.bit_equal(m.head));
        REQUIRE(loaded.model.modules.size() == m.modules.size());
        for (std::size_t i = 0; i < m.modules.size(); ++i) {
            CHECK(loaded.model.modules[i].name == m.modules[i].name);
            CHECK(loaded.model.modules[i].weight.bit_equal(m.modules[i].weight));
        }
        CHECK(loaded.model.frozen_hash == m.frozen_hash);
        CHECK_NOTHROW(require_frozen(loaded.model));
        REQUIRE(loaded.prune);
        CHECK(loaded.prune->method == PruneMethod::Wanda);
        CHECK(loaded.prune->sparsity == 0.5);
    }

    TEST_CASE("dense model round trip has no prune record")
    {
        TempDir dir("shears_test_ckpt_dense");
        const Model m = test::small_model(2);
        save_model(m, dir.path);
        const auto loaded = load_model(dir.path);
        CHECK_FALSE(loaded.prune);
        CHECK_FALSE(loaded.model.frozen_hash);
    }

    TEST_CASE("a tampered tensor is caught by the frozen check")
    {
        TempDir dir("shears_test_ckpt_tamper");
        const Model m = frozen_pruned(3);
        save_model(m, dir.path);
        const auto file = dir.path / "modules" / "b1.up.shrt";
        auto w = load_tensor(file);
        w(0, 0) += 0.5f;
        save_tensor(file, w);
        const auto loaded = load_model(dir.path);
        CHECK_THROWS_AS(require_frozen(loaded.model), ArtifactError);
    }

    TEST_CASE("corrupt or missing pieces are artifact errors")
    {
        TempDir dir("shears_test_ckpt_corrupt");
        const Model m = frozen_pruned(4);
        CHECK_THROWS_AS((void)load_model(dir.path), ArtifactError);

        save_model(m, dir.path);
        { std::ofstream(dir.path / "meta.json") << "{not json"; }
        CHECK_THROWS_AS((void)load_model(dir.path), ArtifactError);

        save_model(m, dir.path);
        auto meta = read_json(dir.path / "meta.json");
        meta["format"] = "something-else";
        write_json(dir.path / "meta.json", meta);
        CHECK_THROWS_AS((void)load_model(dir.path), ArtifactError);

        save_model(m, dir.path);
        fs::remove(dir.path / "head.shrt");
        CHECK_THROWS_AS((void)load_model(dir.path), ArtifactError);

        save_model(m, dir.path);
        save_tensor(dir.path / "modules" / "b0.q.shrt", DenseMatrix(3, 3));
        CHECK_THROWS_AS((void)load_model(dir.path), ArtifactError);

        save_model(m, dir.path);
        meta = read_json(dir.path / "meta.json");
        meta["config"]["d_model"] = "wide";
        write_json(dir.path / "meta.json", meta);
        CHECK_THROWS_AS((void)load_model(dir.path), ArtifactError);
    }

    TEST_CASE("adapter round trip")
    {
        TempDir dir("shears_test_ckpt_adapter");
        const Model m = test::small_model(5);
        Rng rng(6);
        auto ad = attach(m, {"b0.q", "b0.down"}, {6, 4, 2}, 12.0, rng);
        test::randomize_b(ad, 0.3, 7);
        ad.trained = true;
        ad.scaling = AdapterScaling::MaxRank;
        save_adapter(ad, dir.path);
        const auto back = load_adapter(dir.path);
        CHECK(back == ad);

        fs::remove(dir.path / "b0.q.B.shrt");
        CHECK_THROWS_AS((void)load_adapter(dir.path), ArtifactError);
    }

    TEST_CASE("sub-adapter configs parse strictly")
    {
        const SubAdapterConfig c{{"b0.q", 24}, {"b1.k", 16}};
        CHECK(sub_config_from_json(to_json(c)) == c);
        CHECK_THROWS_AS((void)sub_config_from_json(nlohmann::json::array()), std::invalid_argument);
        CHECK_THROWS_AS((void)sub_config_from_json(nlohmann::json{{"b0.q", -1}}), std::invalid_argument);
        CHECK_THROWS_AS((void)sub_config_from_json(nlohmann::json{{"b0.q", "big"}}), std::invalid_argument);
    }

    TEST_CASE("model config JSON round trip")
    {
        ModelConfig c;
        c.d_model = 48;
        c.seed = 99;
        CHECK(model_config_from_json(to_json(c)) == c);
    }
}
