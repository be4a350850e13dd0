#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowpert {

/// Bad dimensions, out-of-range parameters, malformed inputs.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite state or degenerate scale encountered during a computation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, std::ptrdiff_t index = -1)
      : std::runtime_error(index >= 0 ? what + " (at index " + std::to_string(index) + ")" : what),
        index_(index) {}

  /// Integration step or batch index where the failure happened, -1 if none.
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

/// Invalid experiment configuration (unknown key, missing field, wrong type).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flowpert
