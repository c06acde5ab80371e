#pragma once

#include <stdexcept>
#include <string>

namespace mfg {

// Bad user-supplied configuration (grid, model parameters, experiment setup).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A solver failed to converge or diverged; carries a human-readable trace.
class SolverError : public std::runtime_error {
public:
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation not available for the given model or dimensions.
class UnsupportedError : public std::runtime_error {
public:
  explicit UnsupportedError(const std::string& msg) : std::runtime_error(msg) {}
};

// Out-of-range index (players, coordinates, paths).
class IndexError : public std::out_of_range {
public:
  explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

}  // namespace mfg
