#pragma once

#include <stdexcept>
#include <string>

namespace taxo {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or otherwise malformed numeric input.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Shapes of two operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration (ranges, missing fields, inconsistent files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : Error("diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace taxo
