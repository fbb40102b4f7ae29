#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ovhr3d {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input. Carries the location of the offending record.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, std::size_t byte_offset, const std::string& message);

  const std::string& source() const noexcept { return source_; }
  /// 1-based line number for text formats, 0 when not applicable.
  std::size_t line() const noexcept { return line_; }
  std::size_t byte_offset() const noexcept { return byte_offset_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string source_;
  std::size_t line_;
  std::size_t byte_offset_;
  std::string detail_;
};

/// A file parsed but does not carry the properties a loader requires.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// The perception backend could not produce a valid answer (connection,
/// timeout, non-200 status, or a malformed response).
class BackendUnavailable : public Error {
 public:
  using Error::Error;
};

/// A (view, mask) pair was applied to a vote table twice.
class DuplicateVote : public Error {
 public:
  using Error::Error;
};

}  // namespace ovhr3d
