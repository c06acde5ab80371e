#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>

#include "mfglab/model.hpp"
#include "mfglab/theta.hpp"

namespace mfg {

// Randomized falsifier / lower-bound estimator for the drift and terminal
// monotonicity conditions. For generic coefficient sets the verdict is "no
// violation found in `trials` sampled clouds"; for LQ under the validated
// parameter conditions the exact algebra guarantees the margins.

struct DriftWitness {
  std::size_t node = 0;
  ThetaCloud first, second;
};

struct TerminalWitness {
  Eigen::MatrixXd first, second;  // paired x-atoms
};

struct MonotonicityReport {
  std::size_t trials = 0;
  bool passed = false;
  // margin = distance into the good half-line: drift margin is -gap,
  // terminal margin is +gap; the estimates are their minima over trials.
  double min_drift_margin = 0.0;
  double min_terminal_margin = 0.0;
  double estimated_CH = 0.0;  // = min_drift_margin
  double estimated_CG = 0.0;  // = min_terminal_margin
  std::optional<DriftWitness> drift_witness;
  std::optional<TerminalWitness> terminal_witness;
};

// E[-dX.dF + dY.dB + dZ:dSigma + dZ0:dSigma0] / E[|dX|^2] across paired atoms,
// each cloud carrying its own empirical law. A zero denominator yields 0 when
// the numerator vanishes and a +-infinity sentinel otherwise.
double drift_monotonicity_gap(const CoefficientSet& coeffs, std::size_t node,
                              const ThetaCloud& first, const ThetaCloud& second);

// E[dX.dG] / E[|dX|^2] with the same degenerate-denominator convention.
double terminal_monotonicity_gap(const CoefficientSet& coeffs, const Eigen::MatrixXd& firstX,
                                 const Eigen::MatrixXd& secondX);

// Samples `trials` paired Gaussian clouds (2..max_atoms atoms, component
// scales log-uniform in [0.1, 10], random grid node) and records the worst
// margins with their witnesses. Deterministic given the seed; trials draw
// from independent sub-streams so the reduction is order-free.
MonotonicityReport certify(const CoefficientSet& coeffs, std::size_t trials,
                           Eigen::Index max_atoms, std::uint64_t seed);

}  // namespace mfg
