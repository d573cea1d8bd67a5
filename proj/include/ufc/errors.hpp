// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ufc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN or infinity.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an API call was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// The requested distillation budget cannot be met (K == 0, class exhausted, ...).
class BudgetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, corrupt or incompatible artifact on disk. Always names the file.
class ArtifactError : public Error {
 public:
  ArtifactError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Training stopped below its accuracy target.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double final_accuracy)
      : Error(what), final_accuracy_(final_accuracy) {}
  double final_accuracy() const noexcept { return final_accuracy_; }

 private:
  double final_accuracy_;
};

/// A synthesis objective became non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"),
        detail_(what),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }
  /// The message without the iteration suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t iteration_;
};

}  // namespace ufc
