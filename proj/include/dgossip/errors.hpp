#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dgossip {

/// Invalid configuration or precondition violation detected before any compute.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter vector became non-finite during training.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t round, std::size_t client, const std::string& what)
      : std::runtime_error("divergence at round " + std::to_string(round) + ", client " +
                           std::to_string(client) + ": " + what),
        round_(round),
        client_(client) {}

  std::size_t round() const noexcept { return round_; }
  std::size_t client() const noexcept { return client_; }

 private:
  std::size_t round_;
  std::size_t client_;
};

/// Filesystem or parse failure on an external artifact.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical routine failed (e.g. eigen-solver did not converge).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dgossip
