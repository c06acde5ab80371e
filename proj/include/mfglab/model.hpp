#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mfglab/measure.hpp"
#include "mfglab/theta.hpp"
#include "mfglab/time_grid.hpp"

namespace mfg {

// Piecewise-constant time-indexed matrix: either a single constant or one
// value per grid node.
struct MatrixSchedule {
  std::vector<Eigen::MatrixXd> values;

  MatrixSchedule() = default;
  MatrixSchedule(Eigen::MatrixXd constant) { values.push_back(std::move(constant)); }
  static MatrixSchedule scalar(double v) { return MatrixSchedule(Eigen::MatrixXd::Constant(1, 1, v)); }

  const Eigen::MatrixXd& at(std::size_t node) const {
    return values.size() == 1 ? values.front() : values.at(node);
  }
  bool empty() const { return values.empty(); }
};

// Linear-quadratic game of the shipped model.
//
// State:  dX = (A X + B u) dt + (C_st X + D u) dW + (C0_st X + D0 u) dW0,
//         u = c1*alpha - c2*nu,  nu = conditional mean of the control.
// Cost:   1/2 ( x'Qx + (x - S mu)' Qbar (x - S mu) + a'Pa + nu'Pbar nu ),
//         terminal with (QT, QbarT, ST).
//
// C and C0 are stored stacked by noise column ((n*d) x n); for d = 1 this is
// the plain n x n matrix.
struct LQCoefficients {
  Eigen::Index n = 1, l = 1, d = 1;
  MatrixSchedule A, B, C, C0, D, D0;   // B: n x l; D, D0: (n*d) x l; C, C0: (n*d) x n
  MatrixSchedule Q, Qbar, S, P, Pbar;  // Q, Qbar, S: n x n; P, Pbar: l x l
  Eigen::MatrixXd QT, QbarT, ST;       // terminal cost matrices, n x n
  double c1 = 0.0, c2 = 0.0;
};

struct ValidationReport {
  bool passed = false;
  double lambda = 0.0;  // largest lambda with Q + Qbar >= lambda I over the grid
  std::vector<std::pair<std::string, std::size_t>> violations;  // (condition, time node)
};

ValidationReport validate_lq(const LQCoefficients& lq, const TimeGrid& grid);

// Generic coefficient set (b, sigma, sigma0, f, g) with the derivative slots
// the solvers need. All evaluators are separable: they take the state
// marginal mu and the control marginal nu in place of the joint law.
// Derivatives of matrix-valued coefficients are exposed as adjoint
// contractions, e.g. dx_sigma_adj(...)(z) = (d_x sigma)^T : z.
struct CoefficientSet {
  using Vec = Eigen::VectorXd;
  using Mat = Eigen::MatrixXd;
  using Emp = EmpiricalMeasure;

  Eigen::Index n = 1, l = 1, d = 1;
  double gamma = 0.0;  // strong-convexity modulus of a -> H(a)
  TimeGrid grid;

  std::function<Vec(double, const Vec&, const Vec&, const Emp&, const Emp&)> b;
  std::function<Mat(double, const Vec&, const Vec&, const Emp&, const Emp&)> sigma, sigma0;
  std::function<double(double, const Vec&, const Vec&, const Emp&, const Emp&)> f;
  std::function<double(const Vec&, const Emp&)> g;

  std::function<Vec(double, const Vec&, const Vec&, const Emp&, const Emp&, const Vec&)>
      dx_b_adj, da_b_adj;  // (d b)^T y
  std::function<Vec(double, const Vec&, const Vec&, const Emp&, const Emp&, const Mat&)>
      dx_sigma_adj, da_sigma_adj, dx_sigma0_adj, da_sigma0_adj;
  std::function<Vec(double, const Vec&, const Vec&, const Emp&, const Emp&)> dx_f, da_f;
  std::function<Vec(const Vec&, const Emp&)> dx_g;

  // Measure derivatives at an atom. dmu_* are evaluated at a state atom u,
  // dnu_* at a control atom a; the *_adj variants contract with an adjoint.
  std::function<Vec(double, const Vec&, const Vec&, const Emp&, const Emp&, const Vec&)> dmu_f;
  std::function<Vec(double, const Vec&, const Vec&, const Emp&, const Emp&, const Vec&,
                    const Vec&)> dmu_b_adj;
  std::function<Vec(double, const Vec&, const Vec&, const Emp&, const Emp&, const Vec&,
                    const Mat&)> dmu_sigma_adj, dmu_sigma0_adj;
  std::function<Vec(const Vec&, const Emp&, const Vec&)> dmu_g;
  std::function<Vec(double, const Vec&, const Emp&, const Emp&, const Vec&)> dnu_f2;
  std::function<Vec(double, const Vec&, const Emp&, const Emp&, const Vec&, const Vec&)>
      dnu_b2_adj;
  std::function<Vec(double, const Vec&, const Emp&, const Emp&, const Vec&, const Mat&)>
      dnu_sigma2_adj, dnu_sigma02_adj;

  // Closed-form minimizer of a -> H + a.zeta, when available.
  std::function<Vec(double, const Theta&, const Emp&, const Vec&)> lambda_closed;

  std::shared_ptr<const LQCoefficients> lq;  // set when built from the LQ model

  std::size_t node_of(double t) const {
    const double dt = grid.dt();
    auto k = static_cast<std::ptrdiff_t>(t / dt + 1e-9);
    if (k < 0) k = 0;
    if (k > static_cast<std::ptrdiff_t>(grid.steps)) k = static_cast<std::ptrdiff_t>(grid.steps);
    return static_cast<std::size_t>(k);
  }
};

// Build the closed-form coefficient set of the LQ game. Throws ConfigError if
// validate_lq fails. With enforce = false only the conditions needed for the
// evaluators to be well defined (shapes, P > 0) are enforced, so broken models
// can still be fed to the monotonicity certifier.
CoefficientSet lq_coefficients(const LQCoefficients& lq, const TimeGrid& grid,
                               bool enforce = true);

// Left-endpoint Riemann sum of f plus terminal g, averaged over particles.
// x_path has K+1 clouds (M x n), a_path at least K clouds (M x l), xi_flow at
// least K joint (x,a) measures.
double eval_cost(const CoefficientSet& coeffs, const std::vector<Eigen::MatrixXd>& x_path,
                 const std::vector<Eigen::MatrixXd>& a_path,
                 const std::vector<EmpiricalMeasure>& xi_flow, const TimeGrid& grid);

}  // namespace mfg
