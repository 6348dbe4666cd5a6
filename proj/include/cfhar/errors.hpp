#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cfhar {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration: shape mismatches, missing gradients, invalid settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied data: out-of-range ids, empty channel sets, invalid labels.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : InputError(what + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace cfhar
