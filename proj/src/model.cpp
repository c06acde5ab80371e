#include "mfglab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfglab/errors.hpp"

namespace mfg {

namespace {

Eigen::MatrixXd sym(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

double min_eig(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_eig(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

void check_shape(const MatrixSchedule& s, Eigen::Index rows, Eigen::Index cols,
                 const char* name) {
  if (s.empty()) throw ConfigError(std::string("LQ model: missing coefficient ") + name);
  for (const auto& m : s.values)
    if (m.rows() != rows || m.cols() != cols)
      throw ConfigError(std::string("LQ model: bad shape for ") + name);
}

}  // namespace

ValidationReport validate_lq(const LQCoefficients& lq, const TimeGrid& grid) {
  const Eigen::Index n = lq.n, l = lq.l, d = lq.d;
  check_shape(lq.A, n, n, "A");
  check_shape(lq.B, n, l, "B");
  check_shape(lq.C, n * d, n, "C");
  check_shape(lq.C0, n * d, n, "C0");
  check_shape(lq.D, n * d, l, "D");
  check_shape(lq.D0, n * d, l, "D0");
  check_shape(lq.Q, n, n, "Q");
  check_shape(lq.Qbar, n, n, "Qbar");
  check_shape(lq.S, n, n, "S");
  check_shape(lq.P, l, l, "P");
  check_shape(lq.Pbar, l, l, "Pbar");
  if (lq.QT.rows() != n || lq.QT.cols() != n || lq.QbarT.rows() != n || lq.QbarT.cols() != n ||
      lq.ST.rows() != n || lq.ST.cols() != n)
    throw ConfigError("LQ model: bad shape for a terminal cost matrix");

  ValidationReport rep;
  rep.lambda = std::numeric_limits<double>::infinity();
  const std::size_t K = grid.steps;

  auto check_node = [&](std::size_t k) {
    if (min_eig(lq.P.at(k)) <= 0.0) rep.violations.emplace_back("P positive definite", k);
    if (min_eig(lq.Q.at(k)) <= 0.0) rep.violations.emplace_back("Q positive definite", k);
    if (max_eig(lq.Qbar.at(k) * lq.S.at(k)) > 1e-12)
      rep.violations.emplace_back("Qbar*S negative semidefinite", k);
    rep.lambda = std::min(rep.lambda, min_eig(lq.Q.at(k) + lq.Qbar.at(k)));
    for (const Eigen::MatrixXd* m :
         {&lq.A.at(k), &lq.B.at(k), &lq.C.at(k), &lq.C0.at(k), &lq.D.at(k), &lq.D0.at(k),
          &lq.Q.at(k), &lq.Qbar.at(k), &lq.S.at(k), &lq.P.at(k), &lq.Pbar.at(k)})
      if (!m->allFinite()) {
        rep.violations.emplace_back("coefficients finite", k);
        break;
      }
  };
  for (std::size_t k = 0; k <= K; ++k) check_node(k);

  if (max_eig(lq.QbarT * lq.ST) > 1e-12)
    rep.violations.emplace_back("QbarT*ST negative semidefinite", K);
  if (!(lq.QT.allFinite() && lq.QbarT.allFinite() && lq.ST.allFinite()))
    rep.violations.emplace_back("terminal coefficients finite", K);
  if (!(lq.c1 == 0.0 || (lq.c1 > 0.0 && lq.c2 / lq.c1 <= 1.0 + 1e-12)))
    rep.violations.emplace_back("c1 = 0 or c2/c1 <= 1", 0);
  if (rep.lambda <= 0.0) rep.violations.emplace_back("Q + Qbar >= lambda*I with lambda > 0", 0);

  rep.passed = rep.violations.empty();
  return rep;
}

CoefficientSet lq_coefficients(const LQCoefficients& lq, const TimeGrid& grid, bool enforce) {
  const ValidationReport rep = validate_lq(lq, grid);
  if (!enforce && !rep.passed) {
    // Lambda still needs an invertible P.
    for (const auto& [cond, node] : rep.violations)
      if (cond == std::string("P positive definite"))
        throw ConfigError("LQ model: P must be positive definite at node " +
                          std::to_string(node));
  }
  if (enforce && !rep.passed) {
    std::string msg = "LQ model fails its standing assumptions:";
    for (const auto& [cond, node] : rep.violations)
      msg += "\n  node " + std::to_string(node) + ": " + cond;
    throw ConfigError(msg);
  }

  auto shared = std::make_shared<LQCoefficients>(lq);
  CoefficientSet cs;
  cs.n = lq.n;
  cs.l = lq.l;
  cs.d = lq.d;
  cs.grid = grid;
  cs.lq = shared;

  double pmin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= grid.steps; ++k) pmin = std::min(pmin, min_eig(lq.P.at(k)));
  // Strong-convexity modulus: a quadratic with Hessian P satisfies
  // H(a') - H(a) - dH(a).(a'-a) = 1/2 (a'-a)'P(a'-a).
  cs.gamma = 0.5 * pmin;

  using Vec = Eigen::VectorXd;
  using Mat = Eigen::MatrixXd;
  using Emp = EmpiricalMeasure;
  const Eigen::Index n = lq.n, l = lq.l, d = lq.d;

  auto node = [grid](double t) {
    const double dt = grid.dt();
    auto k = static_cast<std::ptrdiff_t>(t / dt + 1e-9);
    if (k < 0) k = 0;
    const auto K = static_cast<std::ptrdiff_t>(grid.steps);
    if (k > K) k = K;
    return static_cast<std::size_t>(k);
  };

  // Effective control input u = c1*a - c2*nu_bar.
  auto input = [shared](double /*t*/, const Vec& a, const Emp& nu) -> Vec {
    return shared->c1 * a - shared->c2 * nu.mean();
  };

  cs.b = [shared, node, input](double t, const Vec& x, const Vec& a, const Emp&,
                               const Emp& nu) -> Vec {
    const std::size_t k = node(t);
    return shared->A.at(k) * x + shared->B.at(k) * input(t, a, nu);
  };
  cs.sigma = [shared, node, input, n, d](double t, const Vec& x, const Vec& a, const Emp&,
                                         const Emp& nu) -> Mat {
    const std::size_t k = node(t);
    return unflatten_matrix(shared->C.at(k) * x + shared->D.at(k) * input(t, a, nu), n, d);
  };
  cs.sigma0 = [shared, node, input, n, d](double t, const Vec& x, const Vec& a, const Emp&,
                                          const Emp& nu) -> Mat {
    const std::size_t k = node(t);
    return unflatten_matrix(shared->C0.at(k) * x + shared->D0.at(k) * input(t, a, nu), n, d);
  };
  cs.f = [shared, node](double t, const Vec& x, const Vec& a, const Emp& mu,
                        const Emp& nu) -> double {
    const std::size_t k = node(t);
    const Vec xc = x - shared->S.at(k) * mu.mean();
    const Vec nb = nu.mean();
    return 0.5 * (x.dot(shared->Q.at(k) * x) + a.dot(shared->P.at(k) * a) +
                  xc.dot(shared->Qbar.at(k) * xc) + nb.dot(shared->Pbar.at(k) * nb));
  };
  cs.g = [shared](const Vec& x, const Emp& mu) -> double {
    const Vec xc = x - shared->ST * mu.mean();
    return 0.5 * (x.dot(shared->QT * x) + xc.dot(shared->QbarT * xc));
  };

  cs.dx_b_adj = [shared, node](double t, const Vec&, const Vec&, const Emp&, const Emp&,
                               const Vec& y) -> Vec { return shared->A.at(node(t)).transpose() * y; };
  cs.da_b_adj = [shared, node](double t, const Vec&, const Vec&, const Emp&, const Emp&,
                               const Vec& y) -> Vec {
    return shared->c1 * shared->B.at(node(t)).transpose() * y;
  };
  cs.dx_sigma_adj = [shared, node](double t, const Vec&, const Vec&, const Emp&, const Emp&,
                                   const Mat& z) -> Vec {
    return shared->C.at(node(t)).transpose() * flatten_matrix(z);
  };
  cs.da_sigma_adj = [shared, node](double t, const Vec&, const Vec&, const Emp&, const Emp&,
                                   const Mat& z) -> Vec {
    return shared->c1 * shared->D.at(node(t)).transpose() * flatten_matrix(z);
  };
  cs.dx_sigma0_adj = [shared, node](double t, const Vec&, const Vec&, const Emp&, const Emp&,
                                    const Mat& z) -> Vec {
    return shared->C0.at(node(t)).transpose() * flatten_matrix(z);
  };
  cs.da_sigma0_adj = [shared, node](double t, const Vec&, const Vec&, const Emp&, const Emp&,
                                    const Mat& z) -> Vec {
    return shared->c1 * shared->D0.at(node(t)).transpose() * flatten_matrix(z);
  };
  cs.dx_f = [shared, node](double t, const Vec& x, const Vec&, const Emp& mu, const Emp&) -> Vec {
    const std::size_t k = node(t);
    return shared->Q.at(k) * x + shared->Qbar.at(k) * (x - shared->S.at(k) * mu.mean());
  };
  cs.da_f = [shared, node](double t, const Vec&, const Vec& a, const Emp&, const Emp&) -> Vec {
    return shared->P.at(node(t)) * a;
  };
  cs.dx_g = [shared](const Vec& x, const Emp& mu) -> Vec {
    return shared->QT * x + shared->QbarT * (x - shared->ST * mu.mean());
  };

  cs.dmu_f = [shared, node](double t, const Vec& x, const Vec&, const Emp& mu, const Emp&,
                            const Vec&) -> Vec {
    const std::size_t k = node(t);
    return -shared->S.at(k).transpose() * shared->Qbar.at(k) * (x - shared->S.at(k) * mu.mean());
  };
  cs.dmu_b_adj = [n](double, const Vec&, const Vec&, const Emp&, const Emp&, const Vec&,
                     const Vec&) -> Vec { return Vec::Zero(n); };
  cs.dmu_sigma_adj = [n](double, const Vec&, const Vec&, const Emp&, const Emp&, const Vec&,
                         const Mat&) -> Vec { return Vec::Zero(n); };
  cs.dmu_sigma0_adj = [n](double, const Vec&, const Vec&, const Emp&, const Emp&, const Vec&,
                          const Mat&) -> Vec { return Vec::Zero(n); };
  cs.dmu_g = [shared](const Vec& x, const Emp& mu, const Vec&) -> Vec {
    return -shared->ST.transpose() * shared->QbarT * (x - shared->ST * mu.mean());
  };
  cs.dnu_f2 = [shared, node](double t, const Vec&, const Emp&, const Emp& nu, const Vec&) -> Vec {
    return shared->Pbar.at(node(t)) * nu.mean();
  };
  cs.dnu_b2_adj = [shared, node](double t, const Vec&, const Emp&, const Emp&, const Vec&,
                                 const Vec& y) -> Vec {
    return -shared->c2 * shared->B.at(node(t)).transpose() * y;
  };
  cs.dnu_sigma2_adj = [shared, node](double t, const Vec&, const Emp&, const Emp&, const Vec&,
                                     const Mat& z) -> Vec {
    return -shared->c2 * shared->D.at(node(t)).transpose() * flatten_matrix(z);
  };
  cs.dnu_sigma02_adj = [shared, node](double t, const Vec&, const Emp&, const Emp&, const Vec&,
                                      const Mat& z) -> Vec {
    return -shared->c2 * shared->D0.at(node(t)).transpose() * flatten_matrix(z);
  };

  cs.lambda_closed = [shared, node](double t, const Theta& th, const Emp&,
                                    const Vec& zeta) -> Vec {
    const std::size_t k = node(t);
    const Vec combo = shared->B.at(k).transpose() * th.y +
                      shared->D.at(k).transpose() * flatten_matrix(th.z) +
                      shared->D0.at(k).transpose() * flatten_matrix(th.z0);
    return shared->P.at(k).ldlt().solve(-(shared->c1 * combo + zeta));
  };

  return cs;
}

double eval_cost(const CoefficientSet& coeffs, const std::vector<Eigen::MatrixXd>& x_path,
                 const std::vector<Eigen::MatrixXd>& a_path,
                 const std::vector<EmpiricalMeasure>& xi_flow, const TimeGrid& grid) {
  const std::size_t K = grid.steps;
  if (x_path.size() != K + 1) throw ConfigError("eval_cost: state path must have K+1 clouds");
  if (a_path.size() < K) throw ConfigError("eval_cost: control path must have K clouds");
  if (xi_flow.size() < K) throw ConfigError("eval_cost: measure flow must have K entries");
  const double dt = grid.dt();
  const Eigen::Index M = x_path.front().rows();
  const Eigen::Index n = coeffs.n, l = coeffs.l;

  std::vector<Eigen::Index> xcoords(n), acoords(l);
  for (Eigen::Index i = 0; i < n; ++i) xcoords[static_cast<std::size_t>(i)] = i;
  for (Eigen::Index i = 0; i < l; ++i) acoords[static_cast<std::size_t>(i)] = n + i;

  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (x_path[k].rows() != M || a_path[k].rows() != M)
      throw ConfigError("eval_cost: inconsistent particle counts along the path");
    const double t = grid.t(k);
    const EmpiricalMeasure mu = marginal(xi_flow[k], xcoords);
    const EmpiricalMeasure nu = marginal(xi_flow[k], acoords);
    double step = 0.0;
    for (Eigen::Index p = 0; p < M; ++p)
      step += coeffs.f(t, x_path[k].row(p).transpose(), a_path[k].row(p).transpose(), mu, nu);
    total += dt * step / static_cast<double>(M);
  }

  EmpiricalMeasure muT;
  muT.points = x_path[K];
  double term = 0.0;
  for (Eigen::Index p = 0; p < M; ++p) term += coeffs.g(x_path[K].row(p).transpose(), muT);
  total += term / static_cast<double>(M);
  return total;
}

}  // namespace mfg
