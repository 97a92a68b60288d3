#pragma once

#include <stdexcept>
#include <string>

namespace cdapose {

/// Base of every error raised by the library. CLI maps subclasses of
/// UserError to exit code 1 and anything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UserError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public UserError {
 public:
  using UserError::UserError;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

class ParseError : public UserError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : UserError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public UserError {
 public:
  using UserError::UserError;
};

class ShapeError : public UserError {
 public:
  using UserError::UserError;
};

class GenerationError : public UserError {
 public:
  using UserError::UserError;
};

/// A loss was asked to score data its formula excludes (e.g. pose loss on
/// pose-unlabeled items).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdapose
