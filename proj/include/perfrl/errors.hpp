#pragma once

#include <stdexcept>
#include <string>

namespace perfrl {

/// Raised when an iterative or linear solver fails to reach its tolerance.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Malformed or inconsistent experiment/MDP configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace perfrl
