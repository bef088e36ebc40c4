// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace shears {

// Contract violations (bad shapes, unknown names, invalid ranks) raise
// std::invalid_argument. The classes below map onto CLI exit codes.

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace shears
