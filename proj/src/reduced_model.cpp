#include "mfglab/reduced_model.hpp"

#include "mfglab/errors.hpp"
#include "mfglab/hamiltonian.hpp"
#include "mfglab/measure.hpp"

namespace mfg {

LqReducedModel::LqReducedModel(std::shared_ptr<const LQCoefficients> lq, TimeGrid grid)
    : lq_(std::move(lq)), grid_(grid) {
  if (!lq_) throw ConfigError("LqReducedModel: missing LQ coefficients");
}

namespace {

// Per-atom combo = B'y + D'vec(z) + D0'vec(z0), rows of the result.
Eigen::MatrixXd combos(const ThetaCloud& cloud, const LQCoefficients& lq, std::size_t k) {
  return cloud.Y * lq.B.at(k) + cloud.Z * lq.D.at(k) + cloud.Z0 * lq.D0.at(k);
}

}  // namespace

void LqReducedModel::eval(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law,
                          Eigen::MatrixXd* B, Eigen::MatrixXd* Sigma, Eigen::MatrixXd* Sigma0,
                          Eigen::MatrixXd* F) const {
  const LQCoefficients& lq = *lq_;
  const std::size_t k = node;
  const auto Pldlt = lq.P.at(k).ldlt();

  if (B || Sigma || Sigma0) {
    // nu_bar over the law cloud at zeta = 0, then u_i = c1*a_i - c2*nu_bar.
    const Eigen::VectorXd mean_combo = combos(law, lq, k).colwise().mean().transpose();
    const Eigen::VectorXd nubar = Pldlt.solve(-lq.c1 * mean_combo);
    // u_i = c1*alpha_i - c2*nubar with alpha_i = -c1 P^{-1} combo_i.
    Eigen::MatrixXd U =
        -(lq.c1 * lq.c1) * Pldlt.solve(combos(atoms, lq, k).transpose()).transpose();
    U.rowwise() -= (lq.c2 * nubar).transpose();
    if (B) *B = atoms.X * lq.A.at(k).transpose() + U * lq.B.at(k).transpose();
    if (Sigma) *Sigma = atoms.X * lq.C.at(k).transpose() + U * lq.D.at(k).transpose();
    if (Sigma0) *Sigma0 = atoms.X * lq.C0.at(k).transpose() + U * lq.D0.at(k).transpose();
  }
  if (F) {
    const Eigen::VectorXd xbar = law.X.colwise().mean().transpose();
    Eigen::MatrixXd xc = atoms.X;
    xc.rowwise() -= (lq.S.at(k) * xbar).transpose();
    *F = atoms.X * lq.Q.at(k).transpose() + xc * lq.Qbar.at(k).transpose() +
         atoms.Y * lq.A.at(k) + atoms.Z * lq.C.at(k) + atoms.Z0 * lq.C0.at(k);
  }
}

void LqReducedModel::terminal(const Eigen::MatrixXd& X, const Eigen::MatrixXd& lawX,
                              Eigen::MatrixXd& G) const {
  const Eigen::VectorXd xbar = lawX.colwise().mean().transpose();
  Eigen::MatrixXd xc = X;
  xc.rowwise() -= (lq_->ST * xbar).transpose();
  G = X * lq_->QT.transpose() + xc * lq_->QbarT.transpose();
}

void LqReducedModel::control(std::size_t node, const ThetaCloud& atoms, const ThetaCloud&,
                             const Eigen::MatrixXd* zeta, Eigen::MatrixXd& alpha) const {
  const LQCoefficients& lq = *lq_;
  Eigen::MatrixXd rhs = lq.c1 * combos(atoms, lq, node);
  if (zeta) rhs += *zeta;
  alpha = -lq.P.at(node).ldlt().solve(rhs.transpose()).transpose();
}

GenericReducedModel::GenericReducedModel(CoefficientSet coeffs) : coeffs_(std::move(coeffs)) {}

void GenericReducedModel::eval(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law,
                               Eigen::MatrixXd* B, Eigen::MatrixXd* Sigma, Eigen::MatrixXd* Sigma0,
                               Eigen::MatrixXd* F) const {
  const double t = coeffs_.grid.t(node);
  const Eigen::Index M = atoms.size();
  const Eigen::Index nn = coeffs_.n, ll = coeffs_.l, dd = coeffs_.d;
  EmpiricalMeasure mu;
  mu.points = law.X;
  const Eigen::VectorXd zeta0 = Eigen::VectorXd::Zero(ll);

  // phi(xi): push each law atom through Lambda(., mu, 0).
  EmpiricalMeasure nu;
  nu.points.resize(law.size(), ll);
  for (Eigen::Index j = 0; j < law.size(); ++j)
    nu.points.row(j) = minimize_H(coeffs_, t, law.point(j, nn, dd), mu, zeta0).transpose();

  if (B) B->resize(M, nn);
  if (Sigma) Sigma->resize(M, nn * dd);
  if (Sigma0) Sigma0->resize(M, nn * dd);
  if (F) F->resize(M, nn);
  for (Eigen::Index i = 0; i < M; ++i) {
    const Theta th = atoms.point(i, nn, dd);
    const Eigen::VectorXd a = minimize_H(coeffs_, t, th, mu, zeta0);
    if (B) B->row(i) = coeffs_.b(t, th.x, a, mu, nu).transpose();
    if (Sigma) Sigma->row(i) = flatten_matrix(coeffs_.sigma(t, th.x, a, mu, nu)).transpose();
    if (Sigma0) Sigma0->row(i) = flatten_matrix(coeffs_.sigma0(t, th.x, a, mu, nu)).transpose();
    if (F)
      F->row(i) = (coeffs_.dx_f(t, th.x, a, mu, nu) + coeffs_.dx_b_adj(t, th.x, a, mu, nu, th.y) +
                   coeffs_.dx_sigma_adj(t, th.x, a, mu, nu, th.z) +
                   coeffs_.dx_sigma0_adj(t, th.x, a, mu, nu, th.z0))
                      .transpose();
  }
}

void GenericReducedModel::terminal(const Eigen::MatrixXd& X, const Eigen::MatrixXd& lawX,
                                   Eigen::MatrixXd& G) const {
  EmpiricalMeasure mu;
  mu.points = lawX;
  G.resize(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    G.row(i) = coeffs_.dx_g(X.row(i).transpose(), mu).transpose();
}

void GenericReducedModel::control(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law,
                                  const Eigen::MatrixXd* zeta, Eigen::MatrixXd& alpha) const {
  const double t = coeffs_.grid.t(node);
  EmpiricalMeasure mu;
  mu.points = law.X;
  alpha.resize(atoms.size(), coeffs_.l);
  const Eigen::VectorXd zeta0 = Eigen::VectorXd::Zero(coeffs_.l);
  for (Eigen::Index i = 0; i < atoms.size(); ++i) {
    const Eigen::VectorXd zi = zeta ? Eigen::VectorXd(zeta->row(i).transpose()) : zeta0;
    alpha.row(i) =
        minimize_H(coeffs_, t, atoms.point(i, coeffs_.n, coeffs_.d), mu, zi).transpose();
  }
}

void DeltaReducedModel::eval(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law,
                             Eigen::MatrixXd* B, Eigen::MatrixXd* Sigma, Eigen::MatrixXd* Sigma0,
                             Eigen::MatrixXd* F) const {
  base_->eval(node, atoms, law, B, Sigma, Sigma0, F);
  const double delta = delta_;
  if (B) *B = delta * *B - (1.0 - delta) * atoms.Y;
  if (Sigma) *Sigma = delta * *Sigma - (1.0 - delta) * atoms.Z;
  if (Sigma0) *Sigma0 = delta * *Sigma0 - (1.0 - delta) * atoms.Z0;
  if (F) *F = delta * *F + (1.0 - delta) * atoms.X;
}

void DeltaReducedModel::terminal(const Eigen::MatrixXd& X, const Eigen::MatrixXd& lawX,
                                 Eigen::MatrixXd& G) const {
  base_->terminal(X, lawX, G);
  G = delta_ * G + (1.0 - delta_) * X;
}

std::shared_ptr<const ReducedModel> make_reduced_model(const CoefficientSet& coeffs) {
  if (coeffs.lq) return std::make_shared<LqReducedModel>(coeffs.lq, coeffs.grid);
  return std::make_shared<GenericReducedModel>(coeffs);
}

}  // namespace mfg
