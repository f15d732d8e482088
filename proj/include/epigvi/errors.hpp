#pragma once

#include <stdexcept>
#include <string>

namespace epigvi {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform to the operation.
struct ShapeError : Error {
  using Error::Error;
};

/// A value sits on or beyond the domain boundary of an operation
/// (log of a non-positive number, division by zero, negative rate, ...).
struct DomainError : Error {
  using Error::Error;
};

/// A caller broke an API contract (non-scalar loss, mixed tapes, ...).
struct ContractError : Error {
  using Error::Error;
};

/// A computation produced a non-finite or otherwise unusable value.
struct NumericError : Error {
  using Error::Error;
};

/// A configuration value is inconsistent or out of range.
struct ConfigError : Error {
  using Error::Error;
};

/// A file could not be parsed; the message carries line/record context.
struct ParseError : Error {
  using Error::Error;
};

/// A file could not be opened, read or written.
struct IoError : Error {
  using Error::Error;
};

}  // namespace epigvi
