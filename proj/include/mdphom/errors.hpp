#pragma once

#include <stdexcept>
#include <string>

namespace mdphom {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class NonStochasticMatrix : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InfeasibleMarginals : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class SingularJacobian : public Error {
 public:
  using Error::Error;
};

class RiccatiDivergence : public Error {
 public:
  using Error::Error;
};

class NumericalDivergence : public Error {
 public:
  using Error::Error;
};

}  // namespace mdphom
