#pragma once

#include <stdexcept>
#include <string>

namespace rla {

// Base of every error raised by the library. Callers that only need a
// message can catch this; the CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or channel counts that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside its domain (negative stride, |gamma| >= 1, bad label...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong state (backward before forward, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

// File system and file-format failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// A training step produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rla
