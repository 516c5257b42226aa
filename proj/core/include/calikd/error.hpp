#pragma once

#include <stdexcept>
#include <string>

namespace calikd {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Mismatched tensor/parameter dimensions. The message names both sides.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Argument outside its mathematical domain (e.g. temperature <= 0).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Semantically invalid input data (bad labels, non-normalized targets, ...).
class ValidationError : public Error {
public:
  using Error::Error;
};

/// Malformed file content (bad magic, ragged CSV row, ...).
class FormatError : public Error {
public:
  using Error::Error;
};

/// Declared payload size disagrees with the actual byte count.
class TruncationError : public FormatError {
public:
  using FormatError::FormatError;
};

/// Invalid configuration (empty split, calibrated mode without a fit, ...).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Training produced a non-finite loss or parameters.
class DivergedError : public Error {
public:
  using Error::Error;
};

}  // namespace calikd
