#pragma once

#include <cstddef>

#include "mfglab/errors.hpp"

namespace mfg {

// Uniform time grid on [0, T] with K steps. T and K are stored; dt is derived,
// so dt * K == T holds in the stored representation.
struct TimeGrid {
  double horizon = 1.0;
  std::size_t steps = 1;

  double dt() const { return horizon / static_cast<double>(steps); }
  double t(std::size_t k) const { return dt() * static_cast<double>(k); }
  std::size_t nodes() const { return steps + 1; }
};

inline TimeGrid make_time_grid(double horizon, std::size_t steps) {
  if (!(horizon > 0.0)) throw ConfigError("time grid: horizon T must be > 0");
  if (steps < 1) throw ConfigError("time grid: step count K must be >= 1");
  return TimeGrid{horizon, steps};
}

}  // namespace mfg
