#pragma once

#include <stdexcept>
#include <string>

namespace ropdf {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Case-bundle ingestion failure; `kind()` names the violated rule.
class CaseParseError : public Error {
 public:
  enum class Kind {
    missing_file,
    syntax,
    unknown_key,
    duplicate_entry,
    dimension_mismatch,
    asymmetric_matrix,
    nonpositive_rating,
    invalid_value,
    inconsistent_edge,
  };

  CaseParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

[[nodiscard]] const char* to_string(CaseParseError::Kind kind) noexcept;

/// Line removal or lookup against a topology that does not support it.
class TopologyError : public Error {
 public:
  enum class Kind { no_such_line, islanding, missing_rating };

  TopologyError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Non-finite values, failed factorizations, diverged samples.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the documented domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration problems (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ropdf
