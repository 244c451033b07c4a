#pragma once

#include <stdexcept>
#include <string>

namespace cdt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Arguments outside their documented domain (timesteps, step counts, ...).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, corrupt or inconsistent files and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Configuration or checkpoint contents that do not match what was requested.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared in a forward pass or loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdt
