#pragma once

#include <stdexcept>
#include <string>

namespace fbnsl {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A computation left the representable floating-point range (e.g. matexp overflow).
class NumericRangeError : public Error {
 public:
  using Error::Error;
};

/// NaN or otherwise unusable numeric state.
class NumericError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefiniteError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The statistical model is malformed (e.g. a cyclic SEM).
class ModelError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class FramingError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class IntegrityError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fbnsl
