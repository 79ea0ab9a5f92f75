#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace rt {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularMatrixError : NumericError {
  using NumericError::NumericError;
};

struct ConvergenceError : NumericError {
  using NumericError::NumericError;
};

struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Embedded in every emitted report so outputs are traceable to a build.
inline constexpr const char* kVersionTag = "rt-0.1.0";

// All stochastic choices in the library flow through this generator so a
// seed pins an entire run.
using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace rt
