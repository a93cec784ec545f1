#pragma once

#include <stdexcept>
#include <string>

namespace symcov {

enum class InputErrorKind {
  Schema,
  Parse,
  EmptyInput,
  Domain,
  Dimension,
  InvalidArgument,
};

// Problems with user-supplied data, specs, or arguments. Maps to CLI exit code 2.
class InputError : public std::runtime_error {
 public:
  InputError(InputErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] InputErrorKind kind() const noexcept { return kind_; }

 private:
  InputErrorKind kind_;
};

// Failures inside a numerical routine (singular systems, non-finite values).
// Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[nodiscard]] const char* to_string(InputErrorKind kind) noexcept;

}  // namespace symcov
