#pragma once

#include <stdexcept>
#include <string>

namespace ran {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape / dimension disagreement.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid model or run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input file or dataset.
struct DataError : Error {
  using Error::Error;
};

// Operation called in the wrong order (e.g. backward before forward).
struct StateError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Attention mask leaves a query row with no visible key.
struct MaskError : Error {
  using Error::Error;
};

// Caller violated a documented precondition (e.g. all-pad sequence).
struct PreconditionError : Error {
  using Error::Error;
};

}  // namespace ran
