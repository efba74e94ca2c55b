#pragma once

#include <stdexcept>
#include <string>

namespace vewane {

// Base for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Newton-Raphson did not reach tolerance, or the iterate ran off to infinity.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// A fitted model implies division by an estimated zero probability.
class PositivityError : public Error {
 public:
  using Error::Error;
};

// Singular information / Jacobian, or a parameter with no supporting data.
class IdentifiabilityError : public Error {
 public:
  using Error::Error;
};

class DegenerateRiskSetError : public Error {
 public:
  using Error::Error;
};

}  // namespace vewane
