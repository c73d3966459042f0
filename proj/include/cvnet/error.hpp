#pragma once

#include <stdexcept>
#include <string>

namespace cvnet {

// Error categories double as CLI exit codes.
enum class ErrorCategory : int {
  Usage = 2,
  Io = 3,
  Format = 4,
  Config = 5,
  Shape = 6,
  Numeric = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorCategory::Shape, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCategory::Io, what) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorCategory::Format, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::Config, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorCategory::Numeric, what) {}
};

// Rethrows `e` as the same error type with `prefix` prepended to its message.
[[noreturn]] inline void rethrow_with_prefix(const Error& e, const std::string& prefix) {
  const std::string what = prefix + e.what();
  switch (e.category()) {
    case ErrorCategory::Shape: throw ShapeError(what);
    case ErrorCategory::Io: throw IoError(what);
    case ErrorCategory::Format: throw FormatError(what);
    case ErrorCategory::Config: throw ConfigError(what);
    case ErrorCategory::Numeric: throw NumericError(what);
    default: throw Error(e.category(), what);
  }
}

}  // namespace cvnet
