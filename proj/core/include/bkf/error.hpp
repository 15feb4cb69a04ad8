#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bkf {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in a constant, a forward value or a gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Cholesky factorization failed; `minor()` is the 1-based index of the
/// first leading principal minor that is not positive.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(const std::string& what, std::size_t minor)
      : Error(what), minor_(minor) {}
  std::size_t minor() const noexcept { return minor_; }

 private:
  std::size_t minor_;
};

/// Malformed file, bad magic, CRC or version mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure (open, read, write).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace bkf
