#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bayesmesh {

// Error kinds map onto the CLI exit codes in tools/bayesmesh_main.cpp.

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedSize : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A forward pass produced NaN/Inf. `layer` is the zero-based layer index.
class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(const std::string& what, std::size_t layer)
      : std::runtime_error(what), layer_(layer) {}
  [[nodiscard]] std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, std::size_t epoch)
      : std::runtime_error(what), epoch_(epoch) {}
  [[nodiscard]] std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// Data-pipeline failures.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bayesmesh
