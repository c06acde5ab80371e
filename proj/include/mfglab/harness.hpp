#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mfglab/mkv_solver.hpp"
#include "mfglab/model.hpp"
#include "mfglab/nplayer_solver.hpp"
#include "mfglab/time_grid.hpp"

namespace mfg {

// Conditionally i.i.d. copies of the mean-field equilibrium: the pooled
// mean-field solve run with one world per repetition and a large auxiliary
// particle cloud, of which the first `players` particles consume exactly the
// noise streams of the N-player system at the same seed. Per-step matrices
// hold repetition r, copy i at row r*players + i.
struct CoupledCopies {
  MfeSolution mfe;  // worlds = repetitions, particles = auxiliary cloud size
  Eigen::Index players = 0;
  std::vector<Eigen::MatrixXd> X;      // K+1, (R*N) x n
  std::vector<Eigen::MatrixXd> alpha;  // K+1, (R*N) x l
};

// Extract the first N particles of every world as the copies. Throws
// ConfigError when the solution carries fewer than N particles per world.
// Takes the solution by value; move it in to avoid copying the state paths.
CoupledCopies build_coupled_copies(MfeSolution sol, Eigen::Index players);

// Solve the mean-field system once per common path (worlds = cfg.repetitions,
// particles = aux_particles) and extract the copies.
CoupledCopies build_coupled_copies(const CoefficientSet& coeffs, const InitialLaw& mu0,
                                   std::uint64_t seed, const MkvConfig& mkv_cfg,
                                   Eigen::Index players);

// Equilibrium-convergence metrics between the copies and the N-player solve
// on shared noise, plus the per-coefficient error diagnostics.
struct GapReport {
  Eigen::Index N = 0;
  double state_gap = 0.0;    // (1/N) sum_i avg_r sup_k |X^i - X^{N,i}|^2
  double control_gap = 0.0;  // (1/N) sum_i avg_r sum_k |alpha^i - alpha^{N,i}|^2 dt
  // Mean over repetitions and players of the time-integrated squared error
  // terms (EG: terminal only).
  double EB = 0.0, ESigma = 0.0, ESigma0 = 0.0, EF = 0.0, EG = 0.0;
};

GapReport gap_metrics(const CoefficientSet& coeffs, const CoupledCopies& copies,
                      const NeSolution& ne);

// Log-log least-squares fit of gap against N.
struct RateFit {
  std::vector<std::pair<double, double>> points;  // (N, gap)
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

enum class GapKind { State, Control };

RateFit fit_power_law(const std::vector<std::pair<double, double>>& points);
RateFit rate_fit(const std::vector<GapReport>& reports, GapKind which);

// Discrete-time LQR oracle for the deterministic sub-case
// (C = D = C0 = D0 = 0, Qbar = S = Pbar = 0, c2 = 0).
struct RiccatiSolution {
  std::vector<Eigen::MatrixXd> K;     // K+1 nodes, symmetric psd
  std::vector<Eigen::MatrixXd> gain;  // K nodes; alpha_k = -gain_k x_k
  double value(const Eigen::VectorXd& x0) const;  // 1/2 x0' K_0 x0
};

RiccatiSolution riccati_oracle(const LQCoefficients& lq, const TimeGrid& grid);

// Two-sample Kolmogorov-Smirnov statistic and its 1% critical value
// c(0.01) * sqrt((n+m)/(n*m)) with c(0.01) = 1.628.
double ks_statistic(std::vector<double> a, std::vector<double> b);
double ks_critical_1pct(std::size_t n, std::size_t m);

}  // namespace mfg
