#pragma once

#include <stdexcept>
#include <string>

namespace dwellgate {

// Base of every error the library raises. Validation errors (everything
// below) map to CLI exit code 1; anything else escaping is a runtime error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed JSON / YAML text.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a record schema (missing or conflicting fields).
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Numeric value out of its permitted range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or policy.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dwellgate
