#pragma once

#include <stdexcept>
#include <string>

namespace lsattn {

// Tensor shape disagreement; the message names both shapes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// A precondition of an operation was violated by the caller.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration / CLI usage (exit code 2).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are guaranteed (exit code 3).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / parse failures surfaced with path context.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lsattn
