// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

namespace shears {

/// Counter-based generator: the i-th draw is a pure function of (key, i),
/// so streams are identical on every platform. `split` derives independent
/// child streams without touching the parent's counter.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept;

    std::uint64_t next_u64() noexcept;

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept;

    /// Unbiased uniform integer in [0, n). Requires n >= 1.
    std::size_t uniform_index(std::size_t n) noexcept;

    /// Standard normal via Box-Muller; both outputs of a pair are used.
    double normal() noexcept;

    [[nodiscard]] Rng split(std::uint64_t stream) const noexcept;

    [[nodiscard]] std::uint64_t key() const noexcept { return key_; }
    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

} // namespace shears
