// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "shears/pipeline.hpp"

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    bool dense = false;
    std::string which = "best";
    std::string strategy;
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("--config", c.config, "JSON pipeline config (defaults apply to missing fields)");
    cmd->add_option("--set", c.sets, "Override a field by dotted path, e.g. train.epochs=5")->take_all();
    cmd->add_option("--seed", c.seed, "Seed for model init, training and search");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Sparse base model plus elastic low-rank adapters: prune, train, search, evaluate."};
    app.require_subcommand(1);
    Common c;

    auto* prune = app.add_subcommand("prune", "Sparsify the base model and freeze it");
    auto* train = app.add_subcommand("train", "Train the super-adapter on the frozen model");
    auto* search = app.add_subcommand("search", "Search sub-adapter configurations");
    auto* eval = app.add_subcommand("eval", "Evaluate a configuration on the test split");
    auto* bench = app.add_subcommand("bench", "Time the dense and CSR forward paths");
    auto* report = app.add_subcommand("report", "Parameter and sparsity accounting");
    auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");
    auto* config = app.add_subcommand("config", "Print the resolved configuration");
    for (auto* cmd : {prune, train, search, eval, bench, report, pipeline, config}) {
        add_common(cmd, c);
    }
    for (auto* cmd : {train, pipeline}) {
        cmd->add_flag("--dense", c.dense, "Skip pruning; train on the unpruned model");
    }
    search->add_option("--strategy", c.strategy, "heuristic, hillclimb or evolutionary")
        ->check(CLI::IsMember({"heuristic", "hillclimb", "evolutionary"}));
    eval->add_option("--which", c.which, "base, heuristic, maximal, minimal, best, or a JSON config path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        shears::ConfigOverrides overrides{c.sets, c.seed};
        if (!c.strategy.empty()) {
            overrides.sets.push_back("search.strategy=" + c.strategy);
        }
        const auto cfg = shears::load_pipeline_config(
            c.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(c.config), overrides);

        nlohmann::json out;
        if (*prune) {
            out = shears::cmd_prune(cfg);
        } else if (*train) {
            out = shears::cmd_train(cfg, c.dense);
        } else if (*search) {
            out = shears::cmd_search(cfg);
        } else if (*eval) {
            out = shears::cmd_eval(cfg, c.which);
        } else if (*bench) {
            out = shears::cmd_bench(cfg);
        } else if (*report) {
            out = shears::cmd_report(cfg);
        } else if (*pipeline) {
            out = shears::cmd_pipeline(cfg, c.dense);
        } else {
            out = shears::to_json(cfg);
        }
        std::cout << out.dump(2) << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "shears: error: " << e.what() << '\n';
        return shears::exit_code_for(e);
    }
}
