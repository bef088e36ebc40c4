// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "shears/model.hpp"

namespace shears {

/// MajorityToken: label is the class of the strict-majority token.
/// KeyLookup: the key token appears once; label is the class of the token after it.
enum class TaskKind { MajorityToken, KeyLookup };

const char* task_kind_name(TaskKind k) noexcept;
TaskKind parse_task_kind(const std::string& name);

inline constexpr std::uint32_t kKeyToken = 0;

struct TaskSpec {
    TaskKind kind = TaskKind::KeyLookup;
    std::size_t n_train = 4000;
    std::size_t n_val = 500;
    std::size_t n_test = 1000;
    std::size_t seq_len = 5;
    std::size_t vocab_size = 17;
    std::size_t n_classes = 4;
    std::uint64_t seed = 7;

    void validate() const;
};

/// class(t) = t mod n_classes
inline std::uint32_t token_class(std::uint32_t token, std::size_t n_classes)
{
    return static_cast<std::uint32_t>(token % n_classes);
}

struct Splits {
    Batch train;
    Batch val;
    Batch test;
};

/// Each split draws from its own child stream of the spec seed.
Splits generate(const TaskSpec& spec);

/// One JSON object per line: {"split": ..., "tokens": [...], "label": n}.
void export_jsonl(const Splits& splits, const std::filesystem::path& path);
Splits import_jsonl(const std::filesystem::path& path, std::size_t seq_len);

} // namespace shears
