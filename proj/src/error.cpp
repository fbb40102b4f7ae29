#include "ovhr3d/error.hpp"

namespace ovhr3d {

namespace {

std::string format_location(const std::string& source, std::size_t line, std::size_t offset,
                            const std::string& message) {
  std::string out = source.empty() ? std::string("<input>") : source;
  if (line > 0) {
    out += ":" + std::to_string(line);
  } else {
    out += "@" + std::to_string(offset);
  }
  out += ": " + message;
  return out;
}

}  // namespace

ParseError::ParseError(std::string source, std::size_t line, std::size_t byte_offset,
                       const std::string& message)
    : Error(format_location(source, line, byte_offset, message)),
      source_(std::move(source)),
      line_(line),
      byte_offset_(byte_offset),
      detail_(message) {}

}  // namespace ovhr3d
