#pragma once

#include <stdexcept>
#include <string>

namespace smokeseg {

/// Base class for everything this library throws.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/layer shape violations (message names the offending op or layer and both shapes).
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// File and format problems (PNG, manifests, filesystem).
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

/// Checkpoint parsing failures, one code per distinct failure mode.
class CheckpointError : public Error {
 public:
  enum class Code { BadMagic, VersionMismatch, Truncated, ShapeMismatch, BadPayload };

  CheckpointError(Code code, const std::string& msg) : Error(msg), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

/// Configuration validation failures (unknown keys, out-of-range values).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace smokeseg
