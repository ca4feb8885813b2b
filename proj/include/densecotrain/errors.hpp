#pragma once

#include <stdexcept>
#include <string>

namespace densecotrain {

// Bad input: malformed files, out-of-bound parameters, violated preconditions.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Filesystem failures (missing files, unwritable directories).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures inside a running experiment (objective errors, training errors).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace densecotrain
