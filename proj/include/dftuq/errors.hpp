#pragma once

#include <stdexcept>
#include <string>

namespace dftuq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Schema/column mismatch between a data file and the declared schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Cell-level parse failure; message carries the row and column.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::string column)
      : Error(what), row_(row), column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

/// Categorical value outside the declared level set.
class LevelError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

/// A scaler was applied to a matrix with a different column layout.
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or protocol parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: divergence, non-finite loss, failed factorization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace dftuq
