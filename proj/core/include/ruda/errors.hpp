#pragma once

#include <stdexcept>
#include <string>

namespace ruda {

// Validation failures (bad arguments, malformed configs) raise
// std::invalid_argument directly.  The two classes below separate the
// runtime failure modes the CLI maps to exit code 2.

// File could not be read/written or has a malformed on-disk layout.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// A loss, gradient or forward pass produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ruda
