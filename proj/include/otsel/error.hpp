#pragma once

#include <stdexcept>
#include <string>

namespace otsel {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Raised when a matrix that must be factorized is singular or nearly so.
class IllConditioned : public Error {
 public:
  using Error::Error;
};

class Unsupported : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, singular Hessian, diverging iterates.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// An iterative method ran out of iterations. Carries the last residual.
class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(const std::string& what, double last_residual)
      : Error(what + " (last residual " + std::to_string(last_residual) + ")"),
        detail_(what),
        last_residual_(last_residual) {}

  double last_residual() const { return last_residual_; }
  /// The message without the residual suffix.
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  double last_residual_;
};

/// The semi-dual criterion cannot be computed for a candidate, e.g. an
/// unregularized potential whose conjugate is infinite on the targets.
class CriterionUnavailable : public Error {
 public:
  using Error::Error;
};

/// Off-sample evaluation of a fitted SSNB potential failed.
class EvaluationFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace otsel
