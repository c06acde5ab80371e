#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mfglab/model.hpp"
#include "mfglab/noise.hpp"
#include "mfglab/theta.hpp"
#include "mfglab/time_grid.hpp"

namespace mfg {

// zeta^i field of one repetition at one node, from the full adjoint slices:
//   zeta^i = (1/N) dnu_f2(alpha^i)
//          + (1/N) sum_j dnu_b2'(alpha^i) Y^{i,j}
//          + (1/N) sum_j dnu_sigma2'(alpha^i) : Z^{i,j,j}
//          + (1/N) sum_j dnu_sigma02'(alpha^i) : Z0^{i,j}.
// Row i*N+j of the slice arguments holds the (i,j) entry. Returns N x l.
// Throws UnsupportedError when the dnu_* slots are missing.
Eigen::MatrixXd zeta_eval(const CoefficientSet& coeffs, std::size_t node,
                          const Eigen::MatrixXd& X, const Eigen::MatrixXd& alpha,
                          const Eigen::MatrixXd& Yfull, const Eigen::MatrixXd& Zjj,
                          const Eigen::MatrixXd& Z0full);

struct NeConfig {
  Eigen::Index players = 8;        // N, at most 32
  std::size_t repetitions = 256;   // R, at most 512
  double damping = 0.5;
  double tol = 1e-6;
  std::size_t max_iters = 200;
  double guard = 1e8;
  bool store_full_adjoints = false;  // keep Y^{i,j}, Z^{i,j,j}, Z0^{i,j} paths (small runs only)
  // Player i consumes idiosyncratic stream stream_permutation[i] (identity
  // when empty). Relabeling the streams must permute the solution.
  std::vector<Eigen::Index> stream_permutation;
};

// Nash-equilibrium characterization of the N-player game: forward states plus
// the diagonal of the adjoint tensor and the zeta field along the iterate.
// Per-step matrices hold repetition r, player i at row r*N+i; full slices
// (when stored) hold (r, i, j) at row (r*N+i)*N+j.
struct NeSolution {
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<double> residual_history;
  bool ridge_used = false;

  TimeGrid grid;
  Eigen::Index n = 1, l = 1, d = 1, players = 1;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;

  std::vector<Eigen::MatrixXd> X;       // K+1, (R*N) x n
  std::vector<Eigen::MatrixXd> Ydiag;   // K+1, (R*N) x n        Y^{i,i}
  std::vector<Eigen::MatrixXd> Zdiag;   // K+1, (R*N) x (n*d)    Z^{i,i,i}
  std::vector<Eigen::MatrixXd> Z0diag;  // K+1, (R*N) x (n*d)    Z0^{i,i}
  std::vector<Eigen::MatrixXd> zeta;    // K+1, (R*N) x l
  std::vector<Eigen::MatrixXd> alpha;   // K+1, (R*N) x l

  std::vector<Eigen::MatrixXd> Yfull, Zjj, Z0full;  // K+1, (R*N*N) x *, optional

  // Player cloud (X^i, Y^{i,i}, Z^{i,i,i}, Z0^{i,i}) of one repetition.
  ThetaCloud player_theta(std::size_t rep, std::size_t k) const;
  Eigen::MatrixXd player_alpha(std::size_t rep, std::size_t k) const;
};

// Damped Picard iteration on the N-player adjoint system. Conditional
// expectations are regressed across repetitions on the basis {1, X^1..X^N}.
// Noise streams coincide with sample_noise(seed, world = repetition), so the
// first N idiosyncratic paths of each world couple bit-exactly with the
// mean-field particle system run at the same seed.
NeSolution ne_picard_solve(const CoefficientSet& coeffs, const InitialLaw& mu0,
                           std::uint64_t seed, const NeConfig& cfg);

// Max over repetitions, players and nodes k < K of |d_a H(alpha^i) + zeta^i|,
// the first-order optimality defect of the computed controls.
double ne_residual(const CoefficientSet& coeffs, const NeSolution& sol);

}  // namespace mfg
