#pragma once

#include <stdexcept>
#include <string>

namespace lf {

// Base for every error the library raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or stream dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data (LDT1, WAV, manifests).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or failed numerical routines.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lf
