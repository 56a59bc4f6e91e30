#pragma once

#include <stdexcept>
#include <string>

namespace cesn {

/// Malformed or invalid input data (panel files, counts, covariates).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical routine failed (divergence, singular system, non-finite density).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cesn
