#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "mfglab/rng.hpp"
#include "mfglab/time_grid.hpp"

namespace mfg {

// Initial law mu_0: point mass at a state, or a Gaussian with diagonal or
// full covariance. Other laws are rejected at configuration time.
struct InitialLaw {
  enum class Kind { PointMass, Gaussian } kind = Kind::PointMass;
  Eigen::VectorXd mean;      // n
  Eigen::MatrixXd cov_chol;  // n x n lower Cholesky factor (Gaussian only)

  static InitialLaw point_mass(Eigen::VectorXd x0) {
    InitialLaw law;
    law.kind = Kind::PointMass;
    law.mean = std::move(x0);
    return law;
  }
  static InitialLaw gaussian(Eigen::VectorXd mean, const Eigen::MatrixXd& cov);

  Eigen::Index dim() const { return mean.size(); }
};

// Seeded common-noise path plus per-path idiosyncratic Brownian increments and
// initial states on a time grid. Immutable after construction. The `world`
// index selects the common path; increments are derived from disjoint
// counter-based sub-streams, so adding paths never perturbs existing ones.
struct NoiseBundle {
  TimeGrid grid;
  Eigen::Index d = 1;                // noise dimension
  std::uint64_t seed = 0;
  std::uint64_t world = 0;
  Eigen::MatrixXd common;            // K x d, increments of W^0
  Eigen::MatrixXd idiosyncratic;     // P x (K*d), column k*d+j = step k, comp j
  Eigen::MatrixXd initial_states;    // P x n

  Eigen::Index paths() const { return idiosyncratic.rows(); }
  double idio(Eigen::Index path, std::size_t step, Eigen::Index comp) const {
    return idiosyncratic(path, static_cast<Eigen::Index>(step) * d + comp);
  }
};

NoiseBundle sample_noise(const TimeGrid& grid, Eigen::Index paths, Eigen::Index d,
                         const InitialLaw& mu0, std::uint64_t seed, std::uint64_t world = 0);

// Keep the first N idiosyncratic streams and initial states; the common path
// is shared verbatim.
NoiseBundle restrict_players(const NoiseBundle& bundle, Eigen::Index n_players);

}  // namespace mfg
