#pragma once

#include <stdexcept>
#include <string>

namespace expanel {

// Argument outside the mathematical domain of an operation (non-finite input,
// probability outside (0,1), invalid distribution parameters).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Inconsistent dimensions, unknown columns, bad option values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A link produced a parameter outside its admissible range (sigma <= 0).
class InvalidParameterError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Not enough non-missing observations to identify the coefficients.
class UnderdeterminedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimizer or EM could not produce a feasible fit.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Hessian numerically singular; carries the estimated condition number.
class NumericalRankError : public std::runtime_error {
 public:
  NumericalRankError(const std::string& what, double condition)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

// Malformed input file. Row numbers are 1-based and count the header.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace expanel
