// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace unlearn {

// Invalid counts, dimensions or arguments passed to an operation.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed corpus, checkpoint, embedding or report file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses, gradients or parameter updates.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Experiment or run configuration that cannot be executed.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A metric evaluated outside its domain (e.g. EL_n with T <= n).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Memorization pretraining hit its epoch cap below the target accuracy.
class TrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace unlearn
