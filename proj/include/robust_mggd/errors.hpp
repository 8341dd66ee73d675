#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace robust_mggd {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed argument: wrong shape, non-finite entry, out-of-range parameter.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Regularizer or solver configuration that violates its own invariants.
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

// A matrix that must be positive definite is not.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, double eigenvalue)
      : Error(what), eigenvalue_(eigenvalue) {}
  double eigenvalue() const { return eigenvalue_; }

 private:
  double eigenvalue_;
};

// Iterative routine stopped at its cap. Carries the last iterate/estimate.
class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(const std::string& what, double last_estimate)
      : Error(what), last_estimate_(last_estimate) {}
  double last_estimate() const { return last_estimate_; }

 private:
  double last_estimate_;
};

// Observation coincides with the location parameter.
class DegenerateSample : public Error {
 public:
  explicit DegenerateSample(std::size_t index)
      : Error("sample " + std::to_string(index) + " coincides with the mean"),
        index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// Non-finite value appeared inside an iterative solver.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::size_t iteration)
      : Error("non-finite iterate at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace robust_mggd
