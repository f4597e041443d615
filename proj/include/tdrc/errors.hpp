#pragma once

#include <stdexcept>
#include <string>

namespace tdrc {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Configuration or input-file problem (maps to CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure (maps to CLI exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public NumericError {
 public:
  using NumericError::NumericError;
};

class OrderTooHigh : public NumericError {
 public:
  using NumericError::NumericError;
};

class MissingMoment : public NumericError {
 public:
  using NumericError::NumericError;
};

class InvalidModel : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NonFiniteState : public NumericError {
 public:
  using NumericError::NumericError;
};

class NoConvergence : public NumericError {
 public:
  using NumericError::NumericError;
};

class SingularSystem : public NumericError {
 public:
  using NumericError::NumericError;
};

class SingularGamma : public NumericError {
 public:
  using NumericError::NumericError;
};

class ZeroVarianceTeaching : public NumericError {
 public:
  using NumericError::NumericError;
};

class TruncationBudgetExceeded : public NumericError {
 public:
  using NumericError::NumericError;
};

class HypothesisViolated : public NumericError {
 public:
  using NumericError::NumericError;
};

class IoError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace tdrc
