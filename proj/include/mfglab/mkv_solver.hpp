#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "mfglab/measure.hpp"
#include "mfglab/noise.hpp"
#include "mfglab/reduced_model.hpp"
#include "mfglab/theta.hpp"
#include "mfglab/time_grid.hpp"

namespace mfg {

enum class RegressionBasis { Affine, Quadratic };

struct ContinuationConfig {
  bool enabled = false;
  double initial_step = 0.25;
  double min_step = 1e-4;
};

struct MkvConfig {
  std::size_t worlds = 1;        // independent common-noise scenarios
  Eigen::Index particles = 1024; // particles per world
  double damping = 0.5;
  double picard_tol = 1e-6;
  std::size_t max_picard = 200;
  RegressionBasis basis = RegressionBasis::Affine;
  double guard = 1e8;            // forward divergence guard on |state|
  double init_offset = 0.0;      // constant offset of the initial Y guess
  ContinuationConfig continuation;
};

// Regression features. The state is augmented with the world mean so the
// fitted conditional expectations may depend on the conditional law; with a
// single world the mean features are constants and are dropped.
Eigen::Index basis_size(RegressionBasis basis, Eigen::Index n, bool with_mean);
Eigen::MatrixXd basis_features(const Eigen::MatrixXd& X, const Eigen::MatrixXd& xbar_rows,
                               RegressionBasis basis, bool with_mean);

// Converged mean-field equilibrium. Particle states are stored per step with
// world w occupying rows [w*M, (w+1)*M); the backward components are stored
// through their regression coefficients and reconstructed on demand.
struct MfeSolution {
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<double> residual_history;
  bool ridge_used = false;
  std::vector<double> delta_trace;  // continuation stages solved (empty if direct)

  TimeGrid grid;
  Eigen::Index n = 1, l = 1, d = 1;
  std::size_t worlds = 1;
  Eigen::Index particles = 1;
  RegressionBasis basis = RegressionBasis::Affine;
  std::uint64_t seed = 0;

  std::shared_ptr<const ReducedModel> model;
  std::vector<Eigen::MatrixXd> X;  // K+1 entries, (W*M) x n
  std::vector<Eigen::MatrixXd> betaY, betaZ, betaZ0;  // K+1 entries, p x *

  bool with_mean_features() const { return worlds > 1; }
  // Theta cloud of one world at node k (Y at k = K is the exact terminal
  // condition; Z, Z0 at k = K are zero).
  ThetaCloud theta_at(std::size_t world, std::size_t k) const;
  // Equilibrium control alpha = Lambda(theta, mu, 0) of one world at node k.
  Eigen::MatrixXd alpha_at(std::size_t world, std::size_t k) const;
  Eigen::MatrixXd x_at(std::size_t world, std::size_t k) const;
};

// One Euler step of the reduced forward dynamics for a single world.
// Throws SolverError naming the step when the state leaves [-guard, guard]
// or turns non-finite.
Eigen::MatrixXd forward_step(const ReducedModel& model, std::size_t k, const ThetaCloud& atoms,
                             const Eigen::MatrixXd& dW, const Eigen::VectorXd& dW0,
                             double guard = 1e8);

// Least-squares projection of the backward targets onto the features:
//   betaY  ~ Y_{k+1},  betaZ ~ Y_{k+1} (x) dW'/dt,  betaZ0 ~ Y_{k+1} (x) dW0'/dt.
// dW0rows replicates each row's common increment (worlds differ across rows).
// Falls back to a 1e-8 ridge when the Gram matrix is rank deficient.
struct RegressionStep {
  Eigen::MatrixXd betaY, betaZ, betaZ0;
  bool ridge_used = false;
};
RegressionStep backward_regress(const Eigen::MatrixXd& features, const Eigen::MatrixXd& Ynext,
                                const Eigen::MatrixXd& dW, const Eigen::MatrixXd& dW0rows,
                                double dt);

// Damped Picard iteration on the reduced system. Noise and initial states are
// drawn from the same counter-based streams as sample_noise, so per-world
// increments agree bit-for-bit with a NoiseBundle built from (seed, world).
MfeSolution picard_solve(std::shared_ptr<const ReducedModel> model, const InitialLaw& mu0,
                         std::uint64_t seed, const MkvConfig& cfg);

// Continuation in the homotopy parameter delta from the trivially solvable
// system to the target one, warm-starting each stage and halving the step on
// failure. Throws SolverError with the delta trace when the step underflows.
MfeSolution continuation_solve(std::shared_ptr<const ReducedModel> model, const InitialLaw& mu0,
                               std::uint64_t seed, const MkvConfig& cfg);

// Dispatch between the two according to cfg.continuation.enabled.
MfeSolution solve_mfe(std::shared_ptr<const ReducedModel> model, const InitialLaw& mu0,
                      std::uint64_t seed, const MkvConfig& cfg);

// Per-world equilibrium flow in explicit form.
struct WorldFlow {
  std::vector<ThetaCloud> theta;         // K+1 clouds
  std::vector<Eigen::MatrixXd> alpha;    // K+1 controls, M x l
  std::vector<EmpiricalMeasure> xi;      // K+1 joint (x, a) measures
};
WorldFlow extract_mfe(const MfeSolution& sol, std::size_t world);

// Max over worlds and steps of |mean over particles of
// (Y_{k+1} - Y_k + F_k dt - Z_k dW_k - Z0_k dW0_k)|, the discrete martingale
// defect of the backward component.
double martingale_residual(const MfeSolution& sol);

}  // namespace mfg
