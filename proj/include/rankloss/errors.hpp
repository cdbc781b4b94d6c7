#pragma once

#include <stdexcept>
#include <string>

namespace rankloss {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad shapes, non-finite values, out-of-domain arguments.
struct InvalidInputError : Error {
  using Error::Error;
};

// Truncation rank outside [1, min(N, M)].
struct InvalidRankError : Error {
  using Error::Error;
};

// Iterative factorization ran out of budget; carries the residual it reached.
struct ConvergenceError : Error {
  ConvergenceError(const std::string& msg, double residual_)
      : Error(msg), residual(residual_) {}
  double residual;
};

// Operation not valid for the object's current state.
struct StateError : Error {
  using Error::Error;
};

struct TrainingError : Error {
  using Error::Error;
};

// Probing could not certify any epsilon from the grid.
struct CalibrationUnavailableError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace rankloss
