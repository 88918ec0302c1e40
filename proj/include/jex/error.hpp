#pragma once

#include <stdexcept>
#include <string>

namespace jex {

// Malformed or inconsistent input data (files, annotations, manifests).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf detected in model state or outputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace jex
