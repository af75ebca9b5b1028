#pragma once

#include <stdexcept>
#include <string>

namespace phidiv {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (CSV parsing, dataset invariants).
struct DataError : Error {
  using Error::Error;
};

// Bad configuration: unknown keys, unparsable values, invalid grids.
struct ConfigError : Error {
  using Error::Error;
};

// Unsupported argument domain (e.g. lambda <= -1, negative divergence argument).
struct DomainError : Error {
  using Error::Error;
};

// Numerical failure during estimation or inference (singularity, separation,
// non-convergence when the caller demanded convergence).
struct NumericError : Error {
  using Error::Error;
};

// A response category was never observed anywhere in the dataset, so the
// corresponding coefficients diverge.  `category` is 1-based.
struct SeparationError : NumericError {
  explicit SeparationError(int category_1based)
      : NumericError("complete separation: category " +
                     std::to_string(category_1based) +
                     " has zero total count across all clusters"),
        category(category_1based) {}
  int category;
};

}  // namespace phidiv
