#include "mfglab/mkv_solver.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "mfglab/errors.hpp"
#include "mfglab/rng.hpp"

namespace mfg {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd world_means(const MatrixXd& X, std::size_t worlds, Index M) {
  MatrixXd wm(static_cast<Index>(worlds), X.cols());
  for (std::size_t w = 0; w < worlds; ++w)
    wm.row(static_cast<Index>(w)) = X.middleRows(static_cast<Index>(w) * M, M).colwise().mean();
  return wm;
}

MatrixXd expand_rows(const MatrixXd& per_world, Index M) {
  MatrixXd out(per_world.rows() * M, per_world.cols());
  for (Index w = 0; w < per_world.rows(); ++w)
    out.middleRows(w * M, M).rowwise() = per_world.row(w);
  return out;
}

}  // namespace

Eigen::Index basis_size(RegressionBasis basis, Eigen::Index n, bool with_mean) {
  Index p = 1 + n + (with_mean ? n : 0);
  if (basis == RegressionBasis::Quadratic) {
    p += n * (n + 1) / 2;
    if (with_mean) p += n * n + n * (n + 1) / 2;
  }
  return p;
}

Eigen::MatrixXd basis_features(const Eigen::MatrixXd& X, const Eigen::MatrixXd& xbar_rows,
                               RegressionBasis basis, bool with_mean) {
  const Index R = X.rows(), n = X.cols();
  MatrixXd phi(R, basis_size(basis, n, with_mean));
  Index c = 0;
  phi.col(c++).setOnes();
  phi.middleCols(c, n) = X;
  c += n;
  if (with_mean) {
    phi.middleCols(c, n) = xbar_rows;
    c += n;
  }
  if (basis == RegressionBasis::Quadratic) {
    for (Index i = 0; i < n; ++i)
      for (Index j = i; j < n; ++j) phi.col(c++) = X.col(i).cwiseProduct(X.col(j));
    if (with_mean) {
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) phi.col(c++) = X.col(i).cwiseProduct(xbar_rows.col(j));
      for (Index i = 0; i < n; ++i)
        for (Index j = i; j < n; ++j)
          phi.col(c++) = xbar_rows.col(i).cwiseProduct(xbar_rows.col(j));
    }
  }
  return phi;
}

namespace {

// Normal-equation solver shared by all targets of one step.
struct StepRegression {
  Eigen::LDLT<MatrixXd> ldlt;
  const MatrixXd* phi = nullptr;
  double rows = 0.0;
  bool ridge_used = false;

  explicit StepRegression(const MatrixXd& features) : phi(&features) {
    rows = static_cast<double>(features.rows());
    MatrixXd gram = features.transpose() * features / rows;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    const double lmax = es.eigenvalues().maxCoeff();
    if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(lmax, 1.0)) {
      gram += 1e-8 * MatrixXd::Identity(gram.rows(), gram.cols());
      ridge_used = true;
    }
    ldlt.compute(gram);
  }

  MatrixXd fit(const MatrixXd& targets) const {
    return ldlt.solve(phi->transpose() * targets / rows);
  }
};

MatrixXd scaled_targets(const MatrixXd& Ynext, const MatrixXd& dWrows, double dt) {
  const Index R = Ynext.rows(), n = Ynext.cols(), d = dWrows.cols();
  MatrixXd t(R, n * d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < n; ++i)
      t.col(j * n + i) = Ynext.col(i).cwiseProduct(dWrows.col(j)) / dt;
  return t;
}

}  // namespace

RegressionStep backward_regress(const Eigen::MatrixXd& features, const Eigen::MatrixXd& Ynext,
                                const Eigen::MatrixXd& dW, const Eigen::MatrixXd& dW0rows,
                                double dt) {
  if (features.rows() != Ynext.rows() || features.rows() != dW.rows() ||
      features.rows() != dW0rows.rows())
    throw ConfigError("backward_regress: row counts disagree");
  StepRegression reg(features);
  RegressionStep out;
  out.betaY = reg.fit(Ynext);
  // Martingale-difference targets for the integrands: projecting the raw
  // Y * dW products would leave O(1/sqrt(dt)) regression noise in Z; the
  // conditional mean drops out of the stochastic integral, so subtract it.
  const MatrixXd resid = Ynext - features * out.betaY;
  out.betaZ = reg.fit(scaled_targets(resid, dW, dt));
  out.betaZ0 = reg.fit(scaled_targets(resid, dW0rows, dt));
  out.ridge_used = reg.ridge_used;
  return out;
}

Eigen::MatrixXd forward_step(const ReducedModel& model, std::size_t k, const ThetaCloud& atoms,
                             const Eigen::MatrixXd& dW, const Eigen::VectorXd& dW0,
                             double guard) {
  const Index n = model.n(), d = model.d();
  const double dt = model.grid().dt();
  MatrixXd B, Sigma, Sigma0;
  model.eval(k, atoms, atoms, &B, &Sigma, &Sigma0, nullptr);
  MatrixXd next = atoms.X + dt * B;
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < n; ++i)
      next.col(i) += Sigma.col(j * n + i).cwiseProduct(dW.col(j)) +
                     Sigma0.col(j * n + i) * dW0(j);
  if (!next.allFinite() || next.cwiseAbs().maxCoeff() > guard)
    throw SolverError("forward step " + std::to_string(k) + ": state diverged or non-finite");
  return next;
}

namespace {

struct BetaSet {
  std::vector<MatrixXd> Y, Z, Z0;  // K+1 entries each (index K unused)
};

struct NoiseCache {
  std::vector<MatrixXd> dW;   // K entries, (W*M) x d
  std::vector<MatrixXd> dW0;  // K entries, W x d
  MatrixXd X0;                // (W*M) x n
};

NoiseCache make_noise(const TimeGrid& grid, std::size_t worlds, Index M, Index d,
                      const InitialLaw& mu0, std::uint64_t seed) {
  NoiseCache nc;
  const std::size_t K = grid.steps;
  const double sdt = std::sqrt(grid.dt());
  const Index n = mu0.dim();
  nc.dW.assign(K, MatrixXd(static_cast<Index>(worlds) * M, d));
  nc.dW0.assign(K, MatrixXd(static_cast<Index>(worlds), d));
  nc.X0.resize(static_cast<Index>(worlds) * M, n);

  for (std::size_t w = 0; w < worlds; ++w) {
    const std::uint64_t kc = rng::stream_key(seed, rng::Role::Common, w);
    const std::uint64_t ki = rng::stream_key(seed, rng::Role::Idiosyncratic, w);
    const Index base = static_cast<Index>(w) * M;
    for (std::size_t k = 0; k < K; ++k) {
      for (Index j = 0; j < d; ++j)
        nc.dW0[k](static_cast<Index>(w), j) =
            sdt * rng::standard_normal(kc, 0, k, static_cast<std::uint32_t>(j));
      auto& dw = nc.dW[k];
      for (Index pth = 0; pth < M; ++pth)
        for (Index j = 0; j < d; ++j)
          dw(base + pth, j) = sdt * rng::standard_normal(ki, static_cast<std::uint64_t>(pth), k,
                                                         static_cast<std::uint32_t>(j));
    }
    if (mu0.kind == InitialLaw::Kind::PointMass) {
      nc.X0.middleRows(base, M).rowwise() = mu0.mean.transpose();
    } else {
      const std::uint64_t k0 = rng::stream_key(seed, rng::Role::Initial, w);
      VectorXd g(n);
      for (Index pth = 0; pth < M; ++pth) {
        for (Index i = 0; i < n; ++i)
          g(i) = rng::standard_normal(k0, static_cast<std::uint64_t>(pth), 0,
                                      static_cast<std::uint32_t>(i));
        nc.X0.row(base + pth) = (mu0.mean + mu0.cov_chol * g).transpose();
      }
    }
  }
  return nc;
}

class PooledSolver {
 public:
  PooledSolver(const ReducedModel& base, const InitialLaw& mu0, std::uint64_t seed,
               const MkvConfig& cfg)
      : cfg_(cfg),
        grid_(base.grid()),
        n_(base.n()),
        d_(base.d()),
        M_(cfg.particles),
        W_(cfg.worlds),
        K_(base.grid().steps),
        with_mean_(cfg.worlds > 1),
        noise_(make_noise(base.grid(), cfg.worlds, cfg.particles, base.d(), mu0, seed)) {
    if (M_ < 1) throw ConfigError("picard_solve: need at least one particle per world");
    if (W_ < 1) throw ConfigError("picard_solve: need at least one world");
    const Index p = basis_size(cfg.basis, n_, with_mean_);
    beta_.Y.assign(K_ + 1, MatrixXd::Zero(p, n_));
    beta_.Z.assign(K_ + 1, MatrixXd::Zero(p, n_ * d_));
    beta_.Z0.assign(K_ + 1, MatrixXd::Zero(p, n_ * d_));
    for (std::size_t k = 0; k < K_; ++k) beta_.Y[k].row(0).setConstant(cfg.init_offset);
  }

  // Runs the damped Picard iteration against the given stage model, keeping
  // beta as warm start for later stages. Returns false (with a message) on
  // non-convergence or divergence.
  bool run(const ReducedModel& model, std::vector<double>& history, std::string& failure) {
    failure.clear();
    try {
      forward(model, beta_, X_);
      for (std::size_t m = 0; m < cfg_.max_picard; ++m) {
        BetaSet raw = backward(model, X_);
        BetaSet next = blend(beta_, raw, cfg_.damping);
        std::vector<MatrixXd> Xnext;
        forward(model, next, Xnext);
        const double res = distance(beta_, X_, next, Xnext);
        beta_ = std::move(next);
        X_ = std::move(Xnext);
        history.push_back(res);
        if (res <= cfg_.picard_tol) return true;
      }
      failure = "picard iteration did not reach tolerance " +
                std::to_string(cfg_.picard_tol) + " in " + std::to_string(cfg_.max_picard) +
                " iterations";
    } catch (const SolverError& e) {
      failure = e.what();
    }
    return false;
  }

  BetaSet& beta() { return beta_; }
  std::vector<MatrixXd>& state_path() { return X_; }
  bool ridge_used() const { return ridge_used_; }

 private:
  MatrixXd features_at(const MatrixXd& Xk) const {
    const MatrixXd wm = world_means(Xk, W_, M_);
    return basis_features(Xk, with_mean_ ? expand_rows(wm, M_) : MatrixXd(), cfg_.basis,
                          with_mean_);
  }

  void reconstruct(const MatrixXd& phi, const BetaSet& b, std::size_t k, MatrixXd& Y,
                   MatrixXd& Z, MatrixXd& Z0) const {
    Y = phi * b.Y[k];
    Z = phi * b.Z[k];
    Z0 = phi * b.Z0[k];
  }

  void forward(const ReducedModel& model, const BetaSet& b, std::vector<MatrixXd>& Xout) const {
    Xout.assign(K_ + 1, MatrixXd());
    Xout[0] = noise_.X0;
    const double dt = grid_.dt();
    MatrixXd Y, Z, Z0, B, Sigma, Sigma0;
    for (std::size_t k = 0; k < K_; ++k) {
      const MatrixXd phi = features_at(Xout[k]);
      reconstruct(phi, b, k, Y, Z, Z0);
      Xout[k + 1].resize(Xout[k].rows(), n_);
      for (std::size_t w = 0; w < W_; ++w) {
        const Index base = static_cast<Index>(w) * M_;
        ThetaCloud atoms{Xout[k].middleRows(base, M_), Y.middleRows(base, M_),
                         Z.middleRows(base, M_), Z0.middleRows(base, M_)};
        model.eval(k, atoms, atoms, &B, &Sigma, &Sigma0, nullptr);
        MatrixXd next = atoms.X + dt * B;
        const auto dw = noise_.dW[k].middleRows(base, M_);
        for (Index j = 0; j < d_; ++j)
          for (Index i = 0; i < n_; ++i)
            next.col(i) += Sigma.col(j * n_ + i).cwiseProduct(dw.col(j)) +
                           Sigma0.col(j * n_ + i) * noise_.dW0[k](static_cast<Index>(w), j);
        Xout[k + 1].middleRows(base, M_) = next;
      }
      if (!Xout[k + 1].allFinite() || Xout[k + 1].cwiseAbs().maxCoeff() > cfg_.guard)
        throw SolverError("forward step " + std::to_string(k) +
                          ": state diverged or non-finite");
    }
  }

  BetaSet backward(const ReducedModel& model, const std::vector<MatrixXd>& Xp) {
    const Index p = basis_size(cfg_.basis, n_, with_mean_);
    BetaSet b;
    b.Y.assign(K_ + 1, MatrixXd::Zero(p, n_));
    b.Z.assign(K_ + 1, MatrixXd::Zero(p, n_ * d_));
    b.Z0.assign(K_ + 1, MatrixXd::Zero(p, n_ * d_));
    const double dt = grid_.dt();

    MatrixXd Yvals(Xp[K_].rows(), n_);
    MatrixXd G;
    for (std::size_t w = 0; w < W_; ++w) {
      const Index base = static_cast<Index>(w) * M_;
      model.terminal(Xp[K_].middleRows(base, M_), Xp[K_].middleRows(base, M_), G);
      Yvals.middleRows(base, M_) = G;
    }

    MatrixXd F(Yvals.rows(), n_);
    for (std::size_t k = K_; k-- > 0;) {
      const MatrixXd phi = features_at(Xp[k]);
      StepRegression reg(phi);
      ridge_used_ = ridge_used_ || reg.ridge_used;
      const MatrixXd betaYnext = reg.fit(Yvals);
      const MatrixXd Ybar = phi * betaYnext;
      // Regress the martingale difference, not the raw product: the fitted
      // conditional mean contributes nothing to the integrands but would
      // dominate the regression noise at O(1/sqrt(dt)).
      const MatrixXd resid = Yvals - Ybar;
      b.Z[k] = reg.fit(scaled_targets(resid, noise_.dW[k], dt));
      b.Z0[k] = reg.fit(scaled_targets(resid, expand_rows(noise_.dW0[k], M_), dt));
      const MatrixXd Zfit = phi * b.Z[k];
      const MatrixXd Z0fit = phi * b.Z0[k];
      for (std::size_t w = 0; w < W_; ++w) {
        const Index base = static_cast<Index>(w) * M_;
        ThetaCloud atoms{Xp[k].middleRows(base, M_), Ybar.middleRows(base, M_),
                         Zfit.middleRows(base, M_), Z0fit.middleRows(base, M_)};
        MatrixXd Fw;
        model.eval(k, atoms, atoms, nullptr, nullptr, nullptr, &Fw);
        F.middleRows(base, M_) = Fw;
      }
      Yvals = Ybar + dt * F;
      b.Y[k] = reg.fit(Yvals);
    }
    return b;
  }

  static BetaSet blend(const BetaSet& a, const BetaSet& b, double rho) {
    BetaSet out;
    const std::size_t K1 = a.Y.size();
    out.Y.resize(K1);
    out.Z.resize(K1);
    out.Z0.resize(K1);
    for (std::size_t k = 0; k < K1; ++k) {
      out.Y[k] = (1.0 - rho) * a.Y[k] + rho * b.Y[k];
      out.Z[k] = (1.0 - rho) * a.Z[k] + rho * b.Z[k];
      out.Z0[k] = (1.0 - rho) * a.Z0[k] + rho * b.Z0[k];
    }
    return out;
  }

  double distance(const BetaSet& b1, const std::vector<MatrixXd>& X1, const BetaSet& b2,
                  const std::vector<MatrixXd>& X2) const {
    const double dt = grid_.dt();
    const double rows = static_cast<double>(X1[0].rows());
    double acc = 0.0;
    MatrixXd Ya, Za, Z0a, Yb, Zb, Z0b;
    for (std::size_t k = 0; k < K_; ++k) {
      const MatrixXd phi1 = features_at(X1[k]);
      const MatrixXd phi2 = features_at(X2[k]);
      reconstruct(phi1, b1, k, Ya, Za, Z0a);
      reconstruct(phi2, b2, k, Yb, Zb, Z0b);
      acc += dt *
             ((X1[k] - X2[k]).squaredNorm() + (Ya - Yb).squaredNorm() +
              (Za - Zb).squaredNorm() + (Z0a - Z0b).squaredNorm()) /
             rows;
    }
    return acc;
  }

  MkvConfig cfg_;
  TimeGrid grid_;
  Index n_, d_, M_;
  std::size_t W_, K_;
  bool with_mean_;
  NoiseCache noise_;
  BetaSet beta_;
  std::vector<MatrixXd> X_;
  bool ridge_used_ = false;
};

MfeSolution finish(PooledSolver& solver, std::shared_ptr<const ReducedModel> model,
                   std::uint64_t seed, const MkvConfig& cfg, bool converged,
                   std::vector<double> history, std::vector<double> delta_trace) {
  MfeSolution sol;
  sol.converged = converged;
  sol.iterations = history.size();
  sol.residual_history = std::move(history);
  sol.ridge_used = solver.ridge_used();
  sol.delta_trace = std::move(delta_trace);
  sol.grid = model->grid();
  sol.n = model->n();
  sol.l = model->l();
  sol.d = model->d();
  sol.worlds = cfg.worlds;
  sol.particles = cfg.particles;
  sol.basis = cfg.basis;
  sol.seed = seed;
  sol.model = std::move(model);
  sol.X = std::move(solver.state_path());
  sol.betaY = std::move(solver.beta().Y);
  sol.betaZ = std::move(solver.beta().Z);
  sol.betaZ0 = std::move(solver.beta().Z0);
  return sol;
}

}  // namespace

MfeSolution picard_solve(std::shared_ptr<const ReducedModel> model, const InitialLaw& mu0,
                         std::uint64_t seed, const MkvConfig& cfg) {
  PooledSolver solver(*model, mu0, seed, cfg);
  std::vector<double> history;
  std::string failure;
  const bool ok = solver.run(*model, history, failure);
  return finish(solver, std::move(model), seed, cfg, ok, std::move(history), {});
}

MfeSolution continuation_solve(std::shared_ptr<const ReducedModel> model, const InitialLaw& mu0,
                               std::uint64_t seed, const MkvConfig& cfg) {
  PooledSolver solver(*model, mu0, seed, cfg);
  std::vector<double> history;
  std::vector<double> trace;
  double delta = 0.0;
  double eta = cfg.continuation.initial_step;
  while (delta < 1.0) {
    const double next = std::min(1.0, delta + eta);
    DeltaReducedModel stage(model, next);
    const auto backup = solver.beta();
    std::vector<double> h;
    std::string failure;
    if (solver.run(stage, h, failure)) {
      delta = next;
      trace.push_back(next);
      history.insert(history.end(), h.begin(), h.end());
    } else {
      solver.beta() = backup;
      eta *= 0.5;
      if (eta < cfg.continuation.min_step) {
        std::string msg = "continuation stalled at delta " + std::to_string(next) + " (" +
                          failure + "); solved stages:";
        for (double s : trace) msg += " " + std::to_string(s);
        throw SolverError(msg);
      }
    }
  }
  // delta = 1 is the target system itself; rerun bookkeeping not needed.
  return finish(solver, std::move(model), seed, cfg, true, std::move(history), std::move(trace));
}

MfeSolution solve_mfe(std::shared_ptr<const ReducedModel> model, const InitialLaw& mu0,
                      std::uint64_t seed, const MkvConfig& cfg) {
  return cfg.continuation.enabled ? continuation_solve(std::move(model), mu0, seed, cfg)
                                  : picard_solve(std::move(model), mu0, seed, cfg);
}

ThetaCloud MfeSolution::theta_at(std::size_t world, std::size_t k) const {
  if (world >= worlds) throw IndexError("theta_at: world index out of range");
  if (k >= X.size()) throw IndexError("theta_at: step index out of range");
  const Index base = static_cast<Index>(world) * particles;
  ThetaCloud c;
  c.X = X[k].middleRows(base, particles);
  if (k == grid.steps) {
    model->terminal(c.X, c.X, c.Y);
    c.Z = MatrixXd::Zero(particles, n * d);
    c.Z0 = MatrixXd::Zero(particles, n * d);
    return c;
  }
  const MatrixXd wm = c.X.colwise().mean();
  const MatrixXd phi = basis_features(
      c.X, with_mean_features() ? MatrixXd(wm.replicate(particles, 1)) : MatrixXd(), basis,
      with_mean_features());
  c.Y = phi * betaY[k];
  c.Z = phi * betaZ[k];
  c.Z0 = phi * betaZ0[k];
  return c;
}

Eigen::MatrixXd MfeSolution::alpha_at(std::size_t world, std::size_t k) const {
  const ThetaCloud c = theta_at(world, k);
  MatrixXd alpha;
  model->control(k, c, c, nullptr, alpha);
  return alpha;
}

Eigen::MatrixXd MfeSolution::x_at(std::size_t world, std::size_t k) const {
  if (world >= worlds) throw IndexError("x_at: world index out of range");
  if (k >= X.size()) throw IndexError("x_at: step index out of range");
  return X[k].middleRows(static_cast<Index>(world) * particles, particles);
}

WorldFlow extract_mfe(const MfeSolution& sol, std::size_t world) {
  WorldFlow flow;
  const std::size_t K = sol.grid.steps;
  flow.theta.reserve(K + 1);
  flow.alpha.reserve(K + 1);
  flow.xi.reserve(K + 1);
  for (std::size_t k = 0; k <= K; ++k) {
    flow.theta.push_back(sol.theta_at(world, k));
    const ThetaCloud& c = flow.theta.back();
    MatrixXd alpha;
    sol.model->control(k, c, c, nullptr, alpha);
    EmpiricalMeasure xi;
    xi.points.resize(c.size(), sol.n + sol.l);
    xi.points << c.X, alpha;
    flow.alpha.push_back(std::move(alpha));
    flow.xi.push_back(std::move(xi));
  }
  return flow;
}

double martingale_residual(const MfeSolution& sol) {
  const std::size_t K = sol.grid.steps;
  const double dt = sol.grid.dt();
  const double sdt = std::sqrt(dt);
  double worst = 0.0;
  MatrixXd F;
  for (std::size_t w = 0; w < sol.worlds; ++w) {
    const std::uint64_t kc = rng::stream_key(sol.seed, rng::Role::Common, w);
    const std::uint64_t ki = rng::stream_key(sol.seed, rng::Role::Idiosyncratic, w);
    ThetaCloud cur = sol.theta_at(w, 0);
    for (std::size_t k = 0; k < K; ++k) {
      const ThetaCloud nxt = sol.theta_at(w, k + 1);
      sol.model->eval(k, cur, cur, nullptr, nullptr, nullptr, &F);
      MatrixXd defect = nxt.Y - cur.Y + dt * F;
      for (Index j = 0; j < sol.d; ++j) {
        const double dw0 =
            sdt * rng::standard_normal(kc, 0, k, static_cast<std::uint32_t>(j));
        for (Index pth = 0; pth < sol.particles; ++pth) {
          const double dw =
              sdt * rng::standard_normal(ki, static_cast<std::uint64_t>(pth), k,
                                         static_cast<std::uint32_t>(j));
          for (Index i = 0; i < sol.n; ++i)
            defect(pth, i) -= cur.Z(pth, j * sol.n + i) * dw + cur.Z0(pth, j * sol.n + i) * dw0;
        }
      }
      worst = std::max(worst, defect.colwise().mean().norm());
      cur = nxt;
    }
  }
  return worst;
}

}  // namespace mfg
