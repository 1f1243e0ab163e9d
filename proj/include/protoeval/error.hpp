#pragma once

#include <stdexcept>
#include <string>

namespace protoeval {

/// Invalid user configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, missing or inconsistent data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch between grids, features or prototypes.
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

/// An intervention that cannot be applied (absent slot, placement failure).
class InterventionError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace protoeval
