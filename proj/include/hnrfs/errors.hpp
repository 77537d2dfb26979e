#pragma once

#include <stdexcept>
#include <string>

namespace hnrfs {

/// Base of every error raised by the library. Callers that only need a
/// message can catch this; the subclasses let tests and the CLI tell the
/// failure modes apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A statistic or test is undefined for the given data (no comparable pairs,
/// zero variance, no events in a log-rank test, ...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class OverflowError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFormat : public FormatError {
 public:
  using FormatError::FormatError;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hnrfs
