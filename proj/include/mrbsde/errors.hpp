#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mrbsde {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Raised when the terminal data does not satisfy the constraint at maturity.
class TerminalViolation : public Error {
 public:
  TerminalViolation(const std::string& what, double gap) : Error(what), gap_(gap) {}
  double gap() const noexcept { return gap_; }

 private:
  double gap_;
};

// No finite deterministic push satisfies the constraint (bracket expansion exhausted).
class UnsatisfiableConstraint : public Error {
 public:
  using Error::Error;
};

class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

}  // namespace mrbsde
