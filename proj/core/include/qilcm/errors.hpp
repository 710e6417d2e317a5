#pragma once

#include <stdexcept>
#include <string>

namespace qilcm {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not fit the requested operation.
struct DimensionError : Error {
  using Error::Error;
};

/// An argument is outside the operation's domain (empty set, non-scalar
/// loss, too few queries, ...).
struct DomainError : Error {
  using Error::Error;
};

/// Text input could not be parsed; message carries line/token context.
struct ParseError : Error {
  using Error::Error;
};

/// Data disagrees with the declared feature schema.
struct SchemaError : Error {
  using Error::Error;
};

/// Well-formed input with inconsistent content (missing qid, score count
/// mismatch, ...).
struct DataError : Error {
  using Error::Error;
};

/// A documented precondition of an internal interface was violated.
struct ContractViolation : Error {
  using Error::Error;
};

/// Checkpoint or artifact version is not supported.
struct IncompatibleError : Error {
  using Error::Error;
};

}  // namespace qilcm
