#pragma once

#include <stdexcept>
#include <string>

namespace blockfit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or semantically invalid input (bad file, bad edge value, self-loop, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent sizes between objects that must agree (covariates vs. graph, tau vs. Q, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Parameter value outside the domain of an edge family (negative rate, non-positive variance).
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Optimisation failure: non-convergence, singular design, unbounded likelihood.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace blockfit
