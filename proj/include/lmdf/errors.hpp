// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace lmdf {

/// Raised when operand extents do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for out-of-domain arguments (bad sizes, non one-hot targets, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by the optimizer when a gradient stops being finite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input files and streams.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lmdf
