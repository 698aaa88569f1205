#pragma once

#include <stdexcept>
#include <string>

namespace spineseg {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or missing input data: unreadable files, schema violations, shape mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor or raster shapes that do not conform.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

/// Invalid configuration values or unparsable config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or logits during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace spineseg
