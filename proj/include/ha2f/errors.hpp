#pragma once

#include <stdexcept>
#include <string>

namespace ha2f {

/// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration or parameter/shape mismatch against a config.
struct ConfigError : Error {
  using Error::Error;
};

/// Violated operation precondition (shape, phase, scale, value domain).
struct ContractError : Error {
  using Error::Error;
};

/// Shape-specific contract violation; message names the offending dimension.
struct ShapeError : ContractError {
  using ContractError::ContractError;
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

/// Dataset loading / synthetic generation failure.
struct DataError : Error {
  using Error::Error;
};

/// Checkpoint incompatible with the data or config it is applied to.
struct CompatError : Error {
  using Error::Error;
};

}  // namespace ha2f
