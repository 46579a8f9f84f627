#pragma once

#include <stdexcept>
#include <string>

namespace arcl {

/// Operand shapes do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid hyper-parameters, sizes or experiment settings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Out-of-range data such as labels outside [0, C).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An API was called in a state where the result is undefined.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed on-disk data (IDX files, checkpoints, result tables).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace arcl
