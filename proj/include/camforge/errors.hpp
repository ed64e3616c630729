#pragma once

#include <stdexcept>
#include <string>

namespace camforge {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or grid dimensions that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination of values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed input data (files, manifests, images).
class DataError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage failed; carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace camforge
