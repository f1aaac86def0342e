#pragma once

#include <stdexcept>
#include <string>

namespace ncconv {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Convolution geometry that yields no output positions or mismatches its input.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Backward called without a matching forward.
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration (unknown keys, out-of-range values, bad model spec).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset or checkpoint file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Loss became NaN/Inf during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace ncconv
