#include "mfglab/hamiltonian.hpp"

#include <cmath>
#include <string>

#include "mfglab/errors.hpp"

namespace mfg {

namespace {

using Vec = Eigen::VectorXd;

std::pair<EmpiricalMeasure, EmpiricalMeasure> split_joint(const EmpiricalMeasure& xi,
                                                          Eigen::Index n, Eigen::Index l) {
  if (xi.dim() != n + l)
    throw ConfigError("joint measure: expected atoms of dimension n + l");
  std::vector<Eigen::Index> xc(static_cast<std::size_t>(n)), ac(static_cast<std::size_t>(l));
  for (Eigen::Index i = 0; i < n; ++i) xc[static_cast<std::size_t>(i)] = i;
  for (Eigen::Index i = 0; i < l; ++i) ac[static_cast<std::size_t>(i)] = n + i;
  return {marginal(xi, xc), marginal(xi, ac)};
}

Vec hamiltonian_grad_a(const CoefficientSet& cs, double t, const Theta& th,
                       const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                       const Vec& zeta, const Vec& a) {
  return cs.da_f(t, th.x, a, mu, nu) + cs.da_b_adj(t, th.x, a, mu, nu, th.y) +
         cs.da_sigma_adj(t, th.x, a, mu, nu, th.z) +
         cs.da_sigma0_adj(t, th.x, a, mu, nu, th.z0) + zeta;
}

double hamiltonian_value(const CoefficientSet& cs, double t, const Theta& th,
                         const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const Vec& a) {
  return cs.f(t, th.x, a, mu, nu) + cs.b(t, th.x, a, mu, nu).dot(th.y) +
         cs.sigma(t, th.x, a, mu, nu).cwiseProduct(th.z).sum() +
         cs.sigma0(t, th.x, a, mu, nu).cwiseProduct(th.z0).sum();
}

}  // namespace

double eval_H(const CoefficientSet& coeffs, double t, const Theta& th, const Eigen::VectorXd& a,
              const EmpiricalMeasure& xi) {
  auto [mu, nu] = split_joint(xi, coeffs.n, coeffs.l);
  return hamiltonian_value(coeffs, t, th, mu, nu, a);
}

Eigen::VectorXd minimize_H(const CoefficientSet& coeffs, double t, const Theta& th,
                           const EmpiricalMeasure& mu, const Eigen::VectorXd& zeta) {
  if (coeffs.lambda_closed) return coeffs.lambda_closed(t, th, mu, zeta);

  // By separability d_a H does not involve the control marginal; any
  // placeholder works here.
  const EmpiricalMeasure nu = EmpiricalMeasure::dirac(Vec::Zero(coeffs.l));
  const Eigen::Index l = coeffs.l;
  const double tol = 1e-10;

  Vec a = Vec::Zero(l);
  Vec grad = hamiltonian_grad_a(coeffs, t, th, mu, nu, zeta, a);
  for (int iter = 0; iter < 50; ++iter) {
    if (grad.norm() <= tol) return a;

    Eigen::MatrixXd hess(l, l);
    for (Eigen::Index j = 0; j < l; ++j) {
      const double h = 1e-5 * (1.0 + std::abs(a(j)));
      Vec ap = a, am = a;
      ap(j) += h;
      am(j) -= h;
      hess.col(j) = (hamiltonian_grad_a(coeffs, t, th, mu, nu, zeta, ap) -
                     hamiltonian_grad_a(coeffs, t, th, mu, nu, zeta, am)) /
                    (2.0 * h);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess, Eigen::EigenvaluesOnly);
    const double floor = std::max(coeffs.gamma, 1e-8);
    if (es.eigenvalues().minCoeff() < floor)
      hess += (floor - es.eigenvalues().minCoeff()) * Eigen::MatrixXd::Identity(l, l);

    const Vec step = hess.ldlt().solve(-grad);
    const double phi0 = hamiltonian_value(coeffs, t, th, mu, nu, a) + a.dot(zeta);
    const double slope = grad.dot(step);
    double s = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt) {
      const Vec cand = a + s * step;
      const double phi = hamiltonian_value(coeffs, t, th, mu, nu, cand) + cand.dot(zeta);
      if (phi <= phi0 + 1e-4 * s * slope) {
        a = cand;
        moved = true;
        break;
      }
      s *= 0.5;
    }
    if (!moved)
      throw SolverError("minimize_H: line search stalled at gradient norm " +
                        std::to_string(grad.norm()));
    grad = hamiltonian_grad_a(coeffs, t, th, mu, nu, zeta, a);
  }
  if (grad.norm() <= tol) return a;
  throw SolverError("minimize_H: Newton failed to converge, gradient norm " +
                    std::to_string(grad.norm()));
}

double foc_residual(const CoefficientSet& coeffs, double t, const Theta& th,
                    const EmpiricalMeasure& mu, const Eigen::VectorXd& zeta,
                    const Eigen::VectorXd& a) {
  const EmpiricalMeasure nu = EmpiricalMeasure::dirac(Vec::Zero(coeffs.l));
  return hamiltonian_grad_a(coeffs, t, th, mu, nu, zeta, a).norm();
}

ReducedEval reduced_coefficients(const CoefficientSet& coeffs, double t, const Theta& th,
                                 const EmpiricalMeasure& xi_theta) {
  std::vector<Eigen::Index> xc(static_cast<std::size_t>(coeffs.n));
  for (Eigen::Index i = 0; i < coeffs.n; ++i) xc[static_cast<std::size_t>(i)] = i;
  const EmpiricalMeasure mu = marginal(xi_theta, xc);

  const Vec zeta0 = Vec::Zero(coeffs.l);
  const EmpiricalMeasure phi =
      pushforward_phi(xi_theta, coeffs.n, coeffs.d, [&](const Theta& atom) {
        return minimize_H(coeffs, t, atom, mu, zeta0);
      });
  auto [phi_mu, phi_nu] = split_joint(phi, coeffs.n, coeffs.l);

  const Vec a = minimize_H(coeffs, t, th, mu, zeta0);

  ReducedEval out;
  out.B = coeffs.b(t, th.x, a, phi_mu, phi_nu);
  out.Sigma = coeffs.sigma(t, th.x, a, phi_mu, phi_nu);
  out.Sigma0 = coeffs.sigma0(t, th.x, a, phi_mu, phi_nu);
  out.F = coeffs.dx_f(t, th.x, a, phi_mu, phi_nu) +
          coeffs.dx_b_adj(t, th.x, a, phi_mu, phi_nu, th.y) +
          coeffs.dx_sigma_adj(t, th.x, a, phi_mu, phi_nu, th.z) +
          coeffs.dx_sigma0_adj(t, th.x, a, phi_mu, phi_nu, th.z0);
  return out;
}

Eigen::VectorXd terminal_G(const CoefficientSet& coeffs, const Eigen::VectorXd& x,
                           const EmpiricalMeasure& mu) {
  return coeffs.dx_g(x, mu);
}

}  // namespace mfg
