#pragma once

#include <stdexcept>

namespace ntk {

/// Bad input: malformed files, inconsistent shapes, violated preconditions.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced an object that breaks a numerical invariant
/// (non-PSD covariance, diverging training, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ntk
