#pragma once

#include <stdexcept>
#include <string>

namespace ams {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched or unsupported tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration field failed validation. `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Unreadable, truncated or version-incompatible checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or image decoding failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset layout (orphans, empty folders, size mismatch).
class DatasetError : public Error {
 public:
  using Error::Error;
};

}  // namespace ams
