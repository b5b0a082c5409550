#pragma once

#include <stdexcept>
#include <string>

namespace mat {

/// Malformed input text (SDF records, SMILES strings, config files).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Inconsistent configuration or shape mismatch caught before any math runs.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite value where the contract requires finite math (NaN loss, NaN attention).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem failures surfaced with the offending path.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mat
