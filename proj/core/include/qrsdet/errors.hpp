#pragma once

#include <stdexcept>
#include <string>

namespace qrsdet {

/// Raised when a byte stream or text file violates its format.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a configuration violates its invariants.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when training diverges or an optimizer input is invalid.
class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace qrsdet
