#pragma once

#include <stdexcept>
#include <string>

namespace dropbp {

// Shapes that do not line up (matmul inner dims, batch vs config, ...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad user input: token ids out of range, empty corpus, malformed files.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad argument to a pure function (negative budget, k larger than depth).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Call sequence violated, e.g. backward with a cache from a different plan.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN or Inf reached a place where it must not propagate.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dropbp
