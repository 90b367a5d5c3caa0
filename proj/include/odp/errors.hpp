#pragma once

#include <stdexcept>
#include <string>

namespace odp {

// Error taxonomy mapped onto process exit codes by the CLI:
//   0 success, 2 config error, 3 stage-order error, 4 numerical abort, 5 I/O error.
class Error : public std::runtime_error {
 public:
  Error(std::string msg, int exit_code)
      : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

// Invalid configuration values or malformed config files.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::string msg) : Error(std::move(msg), 2) {}
};

// Pipeline stage invoked before its prerequisites have produced their outputs.
class StageOrderError : public Error {
 public:
  explicit StageOrderError(std::string msg) : Error(std::move(msg), 3) {}
};

// NaN/Inf encountered where finite values are guaranteed (training divergence, bad samples).
class NumericalError : public Error {
 public:
  explicit NumericalError(std::string msg) : Error(std::move(msg), 4) {}
};

// File read/write failures, corrupt or truncated artifacts.
class IoError : public Error {
 public:
  explicit IoError(std::string msg) : Error(std::move(msg), 5) {}
};

// API misuse: shape mismatches, unfitted models, broken preconditions.
class ContractError : public Error {
 public:
  explicit ContractError(std::string msg) : Error(std::move(msg), 1) {}
};

}  // namespace odp
