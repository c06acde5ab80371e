#pragma once

#include <Eigen/Dense>

#include "mfglab/measure.hpp"
#include "mfglab/model.hpp"
#include "mfglab/theta.hpp"

namespace mfg {

// H(t, theta, a, xi) = f + b.y + sigma:z + sigma0:z0 with xi a joint (x, a)
// measure; mu and nu are its marginals.
double eval_H(const CoefficientSet& coeffs, double t, const Theta& th, const Eigen::VectorXd& a,
              const EmpiricalMeasure& xi);

// Minimizer of a -> H(t, theta, a, .) + a.zeta over R^l. Uses the model's
// closed form when present, otherwise damped Newton with finite-difference
// Hessian. mu is the state marginal; by separability the minimizer does not
// depend on the control marginal.
Eigen::VectorXd minimize_H(const CoefficientSet& coeffs, double t, const Theta& th,
                           const EmpiricalMeasure& mu, const Eigen::VectorXd& zeta);

// | d_a H(t, theta, a, .) + zeta |.
double foc_residual(const CoefficientSet& coeffs, double t, const Theta& th,
                    const EmpiricalMeasure& mu, const Eigen::VectorXd& zeta,
                    const Eigen::VectorXd& a);

// Reduced coefficients of the conditional McKean-Vlasov system at one point:
// evaluate b, sigma, sigma0 at a* = Lambda(theta, mu, 0) and the pushforward
// measure phi(xi), and the driver F = d_x H at the full theta.
struct ReducedEval {
  Eigen::VectorXd B;
  Eigen::MatrixXd Sigma;
  Eigen::MatrixXd Sigma0;
  Eigen::VectorXd F;
};

ReducedEval reduced_coefficients(const CoefficientSet& coeffs, double t, const Theta& th,
                                 const EmpiricalMeasure& xi_theta);

// G(x, mu) = d_x g.
Eigen::VectorXd terminal_G(const CoefficientSet& coeffs, const Eigen::VectorXd& x,
                           const EmpiricalMeasure& mu);

}  // namespace mfg
