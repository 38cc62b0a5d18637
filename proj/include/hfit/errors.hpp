#pragma once

#include <stdexcept>
#include <string>

namespace hfit {

// Base of every error raised by the library. `category()` is the short tag the
// CLI prints in its single-line error prefix.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* category() const noexcept { return "error"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "shape"; }
};

class IndexError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "index"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

class ValueError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "value"; }
};

}  // namespace hfit
