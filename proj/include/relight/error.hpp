#pragma once

#include <stdexcept>
#include <string>

namespace relight {

// Contract violations: bad shapes, bad arguments, inconsistent configs.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN or Inf appeared; the message names the producing operation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system failures and malformed files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace relight
