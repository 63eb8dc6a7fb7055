#pragma once

#include <stdexcept>
#include <string>

namespace refstyle {

/// Error categories. The C API maps each one to a distinct status code and the
/// CLI to a distinct exit code.
enum class ErrorKind {
  kInvalidArgument,
  kConfig,
  kIo,
  kShape,
  kNumeric,
  kState,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what) : Error(ErrorKind::kInvalidArgument, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

struct StateError : Error {
  explicit StateError(const std::string& what) : Error(ErrorKind::kState, what) {}
};

}  // namespace refstyle
