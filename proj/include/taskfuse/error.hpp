// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace taskfuse {

// Base of every error the library raises. Callers that only need a
// diagnostic can catch this; the subclasses exist for tests and for the
// sweep runner, which records cell failures by kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompatibleError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace taskfuse
