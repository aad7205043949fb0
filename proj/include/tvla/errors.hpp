#pragma once

#include <stdexcept>
#include <string>

namespace tvla {

// Base of every error raised by the library. Subclasses name the contract
// that was violated so callers (and tests) can tell them apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class DecodeError : public Error { using Error::Error; };

// Raised by the file readers. Carries the byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace tvla
