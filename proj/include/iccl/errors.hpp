#pragma once

#include <stdexcept>
#include <string>

namespace iccl {

// Bad user input: config files, CLI values, dataset files.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite quantity. Carries step context so the
// runner can emit a diagnostic before exiting.
struct DivergenceError : std::runtime_error {
  long step = -1;
  double lr = 0.0;
  double grad_norm = 0.0;

  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
  DivergenceError(const std::string& msg, long step_, double lr_, double grad_norm_)
      : std::runtime_error(msg), step(step_), lr(lr_), grad_norm(grad_norm_) {}
};

}  // namespace iccl
