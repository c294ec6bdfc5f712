#pragma once

#include <stdexcept>
#include <string>

namespace selfdeblur {

// Shape or size disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A configuration that cannot be realized (e.g. a pyramid too deep for the image).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller broke a documented precondition.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed input file. The message names the offending line or field.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf encountered during optimization.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace selfdeblur
