// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace m3 {

/// Malformed or truncated file, bad magic/version, unreadable input.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes that do not agree (query width vs. projection rows, map sizes, ...).
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration: unknown keys, missing paths, bad values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or values during optimization.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace m3
