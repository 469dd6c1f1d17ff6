#pragma once

#include <stdexcept>
#include <string>

namespace fvnet {

/// Base class of every error thrown by the library. The category string is
/// stable and machine-parsable; the CLI maps it onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class BoundsError : public Error {
 public:
  explicit BoundsError(const std::string& what) : Error("bounds", what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class VersionError : public Error {
 public:
  explicit VersionError(const std::string& what) : Error("version", what) {}
};

}  // namespace fvnet
