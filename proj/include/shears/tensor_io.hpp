// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shears/linalg.hpp"

namespace shears {

// Binary tensor file layout (all integers little-endian):
//   "SHRT" | version u32 | rank u32 | dims u64 × rank | float32 payload, row-major
inline constexpr std::uint32_t kTensorFormatVersion = 1;

std::vector<std::uint8_t> encode_tensor(const DenseMatrix& m);
/// Rank-1 payloads decode as a single row; ranks above 2 are rejected.
DenseMatrix decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

void save_tensor(const std::filesystem::path& path, const DenseMatrix& m);
DenseMatrix load_tensor(const std::filesystem::path& path);

} // namespace shears
