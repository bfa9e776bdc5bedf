#pragma once

#include <stdexcept>
#include <string>

namespace heihnn {

// Dimension disagreement between operands (messages name both shapes).
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Invalid configuration value (rates, grid sizes, thresholds, ...).
struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed input file; messages carry the 1-based line number.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Loss became non-finite during training; message names the epoch.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace heihnn
