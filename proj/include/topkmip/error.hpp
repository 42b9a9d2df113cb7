#pragma once

#include <stdexcept>
#include <string>

namespace topkmip {

/// Base of all library errors.
class error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Caller passed arguments that violate a documented precondition.
class invalid_argument : public error {
  public:
    using error::error;
};

/// Shapes of two operands do not agree.
class dimension_error : public invalid_argument {
  public:
    using invalid_argument::invalid_argument;
};

/// File could not be opened, read or written.
class io_error : public error {
  public:
    using error::error;
};

/// File contents do not match the documented format.
class format_error : public error {
  public:
    using error::error;
};

/// An iterative method diverged or produced non-finite values.
class numerical_error : public error {
  public:
    using error::error;
};

} // namespace topkmip
