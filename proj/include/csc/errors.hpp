#pragma once

#include <stdexcept>
#include <string>

namespace csc {

/// Shape or dimensionality violation (mismatched operands, invalid geometry).
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Numeric failure: non-finite values, divergence, factorization breakdown.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File format / I/O failure.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad configuration (unknown key, invalid value, missing section).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace csc
