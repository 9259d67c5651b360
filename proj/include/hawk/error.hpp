#pragma once

#include <stdexcept>
#include <string>

namespace hawk {

/// Error categories. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  Parameter = 2,
  Format = 3,
  Degenerate = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ParameterError : Error {
  explicit ParameterError(const std::string& what) : Error(ErrorKind::Parameter, what) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorKind::Format, what) {}
};

/// Empty input, single-class training data, untrained model and similar.
struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& what) : Error(ErrorKind::Degenerate, what) {}
};

}  // namespace hawk
