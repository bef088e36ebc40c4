// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/data.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "shears/error.hpp"
#include "shears/rng.hpp"

namespace shears {

namespace {

void fill_majority(const TaskSpec& spec, Rng& rng, std::uint32_t* tokens, std::uint32_t& label)
{
    const std::size_t len = spec.seq_len;
    const auto majority = static_cast<std::uint32_t>(rng.uniform_index(spec.vocab_size));
    const std::size_t copies = len / 2 + 1;
    for (std::size_t p = 0; p < len; ++p) {
        if (p < copies) {
            tokens[p] = majority;
            continue;
        }
        // Uniform over the other vocab_size - 1 tokens.
        auto t = static_cast<std::uint32_t>(rng.uniform_index(spec.vocab_size - 1));
        tokens[p] = t >= majority ? t + 1 : t;
    }
    // Fisher-Yates so the majority positions are random.
    for (std::size_t p = len; p-- > 1;) {
        const auto q = rng.uniform_index(p + 1);
        std::swap(tokens[p], tokens[q]);
    }
    label = token_class(majority, spec.n_classes);
}

void fill_key_lookup(const TaskSpec& spec, Rng& rng, std::uint32_t* tokens, std::uint32_t& label)
{
    const std::size_t len = spec.seq_len;
    const auto key_pos = rng.uniform_index(len - 1);
    for (std::size_t p = 0; p < len; ++p) {
        tokens[p] = p == key_pos ? kKeyToken : static_cast<std::uint32_t>(1 + rng.uniform_index(spec.vocab_size - 1));
    }
    label = token_class(tokens[key_pos + 1], spec.n_classes);
}

Batch generate_split(const TaskSpec& spec, std::size_t count, Rng rng)
{
    Batch batch;
    batch.seq_len = spec.seq_len;
    batch.tokens.resize(count * spec.seq_len);
    batch.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto* toks = batch.tokens.data() + i * spec.seq_len;
        if (spec.kind == TaskKind::MajorityToken) {
            fill_majority(spec, rng, toks, batch.labels[i]);
        } else {
            fill_key_lookup(spec, rng, toks, batch.labels[i]);
        }
    }
    return batch;
}

} // namespace

const char* task_kind_name(TaskKind k) noexcept
{
    return k == TaskKind::MajorityToken ? "majority_token" : "key_lookup";
}

TaskKind parse_task_kind(const std::string& name)
{
    if (name == "majority_token") {
        return TaskKind::MajorityToken;
    }
    if (name == "key_lookup") {
        return TaskKind::KeyLookup;
    }
    throw std::invalid_argument("unknown task kind '" + name + "' (expected majority_token or key_lookup)");
}

void TaskSpec::validate() const
{
    if (seq_len < 1 || vocab_size < 2 || n_classes < 1) {
        throw std::invalid_argument("TaskSpec: need seq_len >= 1, vocab_size >= 2, n_classes >= 1");
    }
    if (n_classes > vocab_size) {
        throw std::invalid_argument("TaskSpec: n_classes exceeds vocab_size");
    }
    if (kind == TaskKind::KeyLookup) {
        if (seq_len < 2) {
            throw std::invalid_argument("TaskSpec: key_lookup needs seq_len >= 2");
        }
        if (n_classes > vocab_size - 1) {
            throw std::invalid_argument("TaskSpec: key_lookup needs n_classes <= vocab_size - 1");
        }
    }
}

Splits generate(const TaskSpec& spec)
{
    spec.validate();
    const Rng root(spec.seed);
    return {generate_split(spec, spec.n_train, root.split(1)), generate_split(spec, spec.n_val, root.split(2)),
            generate_split(spec, spec.n_test, root.split(3))};
}

void export_jsonl(const Splits& splits, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw ArtifactError("cannot write dataset " + path.string());
    }
    auto dump = [&](const char* split, const Batch& b) {
        for (std::size_t i = 0; i < b.size(); ++i) {
            nlohmann::json row;
            row["split"] = split;
            row["tokens"] = std::vector<std::uint32_t>(b.tokens.begin() + static_cast<std::ptrdiff_t>(i * b.seq_len),
                                                       b.tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * b.seq_len));
            row["label"] = b.labels[i];
            out << row.dump() << '\n';
        }
    };
    dump("train", splits.train);
    dump("val", splits.val);
    dump("test", splits.test);
}

Splits import_jsonl(const std::filesystem::path& path, std::size_t seq_len)
{
    std::ifstream in(path);
    if (!in) {
        throw ArtifactError("missing dataset " + path.string());
    }
    Splits s;
    s.train.seq_len = s.val.seq_len = s.test.seq_len = seq_len;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const auto row = nlohmann::json::parse(line);
            const auto split = row.at("split").get<std::string>();
            const auto tokens = row.at("tokens").get<std::vector<std::uint32_t>>();
            if (tokens.size() != seq_len) {
                throw ArtifactError("wrong sequence length");
            }
            Batch* dst = split == "train" ? &s.train : split == "val" ? &s.val : split == "test" ? &s.test : nullptr;
            if (dst == nullptr) {
                throw ArtifactError("unknown split '" + split + "'");
            }
            dst->tokens.insert(dst->tokens.end(), tokens.begin(), tokens.end());
            dst->labels.push_back(row.at("label").get<std::uint32_t>());
        } catch (const std::exception& e) {
            throw ArtifactError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return s;
}

} // namespace shears
