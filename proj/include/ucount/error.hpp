#pragma once

#include <stdexcept>
#include <string>

namespace ucount {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or grid extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value was violated.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Persisted file could not be decoded.
class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kMalformedHeader, kTruncated, kIo };

  FormatError(Kind kind, const std::string& what) : Error(kind_name(kind) + ": " + what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

  static std::string kind_name(Kind kind) {
    switch (kind) {
      case Kind::kBadMagic: return "bad magic";
      case Kind::kVersionMismatch: return "version mismatch";
      case Kind::kMalformedHeader: return "malformed header";
      case Kind::kTruncated: return "truncated payload";
      case Kind::kIo: return "i/o error";
    }
    return "format error";
  }

 private:
  Kind kind_;
};

/// Experiment configuration could not be parsed or validated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline step ran before the step producing its inputs.
class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

}  // namespace ucount
