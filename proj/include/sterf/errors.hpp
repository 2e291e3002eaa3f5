#pragma once

#include <stdexcept>
#include <string>

namespace sterf {

// Error taxonomy used across the library. The CLI maps these onto its
// exit-code contract (config/usage -> 1, numeric -> 2).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg, long node = -1)
      : std::runtime_error(msg), node_id(node) {}
  long node_id;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sterf
