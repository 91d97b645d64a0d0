#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdp {

/// A caller-supplied value violates a precondition (dimension, fraction,
/// shape, enum value, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Filesystem failure: missing file, unwritable directory, short read.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk content. `offset` is the byte offset of the first
/// unparseable content when known, npos otherwise.
class ParseError : public std::runtime_error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit ParseError(const std::string& msg, std::size_t offset = npos)
      : std::runtime_error(offset == npos ? msg : msg + " (offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// A computation produced NaN/Inf or is mathematically undefined.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Correlation of two constant images.
class UndefinedCorrelation : public NumericError {
 public:
  using NumericError::NumericError;
};

/// A pipeline stage cannot run (missing prerequisite outputs, inconsistent
/// provenance). The message names the command to run first where applicable.
class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Should-not-happen condition with a recovery hint.
class InternalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shift search peak fell below the acceptance floor; carries the peak so
/// callers can log it.
class RegistrationFailed : public std::runtime_error {
 public:
  RegistrationFailed(const std::string& msg, double peak)
      : std::runtime_error(msg), peak_(peak) {}

  double peak() const { return peak_; }

 private:
  double peak_;
};

}  // namespace cdp
