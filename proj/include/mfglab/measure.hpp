#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "mfglab/theta.hpp"

namespace mfg {

// Uniformly weighted particle cloud on R^k. Each row of `points` is an atom
// with weight 1/M. Represents the conditional law L^1, the empirical law L^N,
// and their marginals.
struct EmpiricalMeasure {
  Eigen::MatrixXd points;  // M x k

  Eigen::Index atoms() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
  Eigen::VectorXd mean() const { return points.colwise().mean().transpose(); }

  static EmpiricalMeasure dirac(const Eigen::VectorXd& x) {
    EmpiricalMeasure m;
    m.points = x.transpose();
    return m;
  }
};

// (1/M) sum |x_i|^2, the square of the paper-level M_2 functional.
double second_moment(const EmpiricalMeasure& mu);

// Exact W_2 between 1-D empirical measures with equal atom counts, via the
// monotone (sorted) coupling.
double wasserstein2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

// Atom-wise coordinate projection.
EmpiricalMeasure marginal(const EmpiricalMeasure& xi, const std::vector<Eigen::Index>& coords);

// Pushforward phi_t(xi) = xi o (id_x, Lambda(., mu, 0))^{-1}: each theta atom
// (x, y, z, z0) maps to (x, a) with a = lambda_eval(theta). The caller supplies
// the minimizer evaluation (with zeta = 0 and mu the x-marginal of xi).
EmpiricalMeasure pushforward_phi(const EmpiricalMeasure& xi, Eigen::Index n, Eigen::Index d,
                                 const std::function<Eigen::VectorXd(const Theta&)>& lambda_eval);

// Empirical measure over a world's theta cloud (flattened atoms (x,y,z,z0)).
EmpiricalMeasure conditional_law(const ThetaCloud& cloud);

// Helpers for packing theta atoms into measure rows and back.
Eigen::VectorXd pack_theta(const Theta& th);
Theta unpack_theta(const Eigen::VectorXd& row, Eigen::Index n, Eigen::Index d);
EmpiricalMeasure theta_measure(const ThetaCloud& cloud);
ThetaCloud theta_cloud_from_measure(const EmpiricalMeasure& xi, Eigen::Index n, Eigen::Index d);

}  // namespace mfg
