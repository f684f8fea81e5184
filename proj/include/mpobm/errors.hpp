#pragma once

#include <stdexcept>
#include <string>

namespace mpobm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed user input: non-finite coordinates, bad intervals, formula syntax.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: D < 2, non-PD precision, empty lists, zero budgets.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Quadrature or iterative solver failed to reach its tolerance.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A dense object would exceed the configured size cap.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an interface precondition (e.g. clique mismatch).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace mpobm
