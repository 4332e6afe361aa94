#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tarec {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input record. `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value reached a place where it would silently propagate.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Ill-formed computation graph (shape mismatch, foreign or sealed tape).
class GraphError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Non-finite training loss. Carries where it happened.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, int batch, const std::string& what)
      : Error("diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
              ": " + what),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace tarec
