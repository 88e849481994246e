#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tmur {

// Argument outside the mathematical domain of an operation (negative evidence,
// non-positive temperature, label out of range, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Array shapes that do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of a stateful object, e.g. running backward twice on one tape.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid hyperparameter combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent or malformed dataset / model files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& file, std::size_t row, std::size_t col, const std::string& what)
      : DataError(file + ":" + std::to_string(row) + ":" + std::to_string(col) + ": " + what),
        row_(row),
        col_(col) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

// A verification (theorem check, acceptance assertion) did not hold.
class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; the message names epoch, batch and term.
class NumericalError : public CheckFailure {
 public:
  using CheckFailure::CheckFailure;
};

}  // namespace tmur
