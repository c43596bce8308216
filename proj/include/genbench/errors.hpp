#pragma once

#include <stdexcept>
#include <string>

namespace genbench {

/// Base class for all errors raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or out-of-range construction parameters (CLI exit 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class WidthMismatchError : public Error {
 public:
  using Error::Error;
};

class InvalidTrainingSetError : public Error {
 public:
  using Error::Error;
};

/// A cost oracle was asked for the cost of a bitstring it cannot price.
class UndefinedCostError : public Error {
 public:
  using Error::Error;
};

class SpaceTooLargeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss, zero-probability training sample, or non-finite gradient
/// (CLI exit 3).
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

/// Metric evaluation failed (CLI exit 4).
class EvaluationError : public Error {
 public:
  using Error::Error;
};

class NoValidSamplesError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace genbench
