#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace recps {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, std::size_t batch)
      : Error("non-finite loss at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

class InsufficientSamplesError : public Error {
 public:
  using Error::Error;
};

class DegenerateMembershipError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or tampered on-disk artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied configuration (maps to exit code 2 in the CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace recps
