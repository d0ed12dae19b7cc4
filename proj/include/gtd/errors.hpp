#pragma once

#include <stdexcept>
#include <string>

namespace gtd {

/// Shape or index mismatch between tables that must agree.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A probability table failed a construction-time invariant (rows not
/// summing to one, negative entries, gamma out of range, ...). Tolerances
/// are fixed at construction; violations are hard errors.
struct InvariantError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An iterative routine hit its cap without reaching tolerance.
struct ConvergenceError : std::runtime_error {
  double residual;
  explicit ConvergenceError(const std::string& what, double res)
      : std::runtime_error(what), residual(res) {}
};

/// A matrix that must be invertible is numerically singular.
struct ConditioningError : std::runtime_error {
  double lambda_min;
  explicit ConditioningError(const std::string& what, double lmin)
      : std::runtime_error(what), lambda_min(lmin) {}
};

/// The target policy puts mass where the behavior policy has none.
struct AbsoluteContinuityError : std::invalid_argument {
  int state;
  int action;
  AbsoluteContinuityError(const std::string& what, int s, int a)
      : std::invalid_argument(what), state(s), action(a) {}
};

}  // namespace gtd
