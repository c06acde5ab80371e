#include "mfglab/nplayer_solver.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "mfglab/errors.hpp"
#include "mfglab/hamiltonian.hpp"
#include "mfglab/rng.hpp"

namespace mfg {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void require_nu_slots(const CoefficientSet& cs) {
  if (!(cs.dnu_f2 && cs.dnu_b2_adj && cs.dnu_sigma2_adj && cs.dnu_sigma02_adj))
    throw UnsupportedError(
        "zeta field needs the control-measure derivative slots (dnu_f2, dnu_b2_adj, "
        "dnu_sigma2_adj, dnu_sigma02_adj)");
}

// Mean over the N rows of each repetition block; result R x cols.
MatrixXd rep_means(const MatrixXd& m, std::size_t reps, Index N) {
  MatrixXd out(static_cast<Index>(reps), m.cols());
  for (std::size_t r = 0; r < reps; ++r)
    out.row(static_cast<Index>(r)) = m.middleRows(static_cast<Index>(r) * N, N).colwise().mean();
  return out;
}

MatrixXd expand_rep(const MatrixXd& per_rep, Index N) {
  MatrixXd out(per_rep.rows() * N, per_rep.cols());
  for (Index r = 0; r < per_rep.rows(); ++r) out.middleRows(r * N, N).rowwise() = per_rep.row(r);
  return out;
}

// Shared least-squares machinery (same ridge convention as the mean-field
// solver's backward regression).
struct StepRegression {
  Eigen::LDLT<MatrixXd> ldlt;
  double rows;
  bool ridge_used = false;

  explicit StepRegression(const MatrixXd& phi) : rows(static_cast<double>(phi.rows())) {
    MatrixXd gram = phi.transpose() * phi / rows;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(es.eigenvalues().maxCoeff(), 1.0)) {
      gram += 1e-8 * MatrixXd::Identity(gram.rows(), gram.cols());
      ridge_used = true;
    }
    ldlt.compute(gram);
  }
};

struct NoiseData {
  std::vector<MatrixXd> dWrows;   // K, (R*N) x d, row r*N+i = player i's increment
  std::vector<MatrixXd> dWrep;    // K, R x (N*d), col i*d+j
  std::vector<MatrixXd> dW0rep;   // K, R x d
  MatrixXd X0;                    // (R*N) x n
};

NoiseData make_noise(const TimeGrid& grid, std::size_t reps, Index N, Index d,
                     const InitialLaw& mu0, std::uint64_t seed,
                     const std::vector<Index>& perm) {
  if (!perm.empty()) {
    if (static_cast<Index>(perm.size()) != N)
      throw ConfigError("stream_permutation must have one entry per player");
    std::vector<bool> seen(perm.size(), false);
    for (Index p : perm) {
      if (p < 0 || p >= N || seen[static_cast<std::size_t>(p)])
        throw ConfigError("stream_permutation must be a permutation of 0..N-1");
      seen[static_cast<std::size_t>(p)] = true;
    }
  }
  auto stream = [&](Index i) { return perm.empty() ? i : perm[static_cast<std::size_t>(i)]; };
  NoiseData nd;
  const std::size_t K = grid.steps;
  const double sdt = std::sqrt(grid.dt());
  const Index n = mu0.dim();
  nd.dWrows.assign(K, MatrixXd(static_cast<Index>(reps) * N, d));
  nd.dWrep.assign(K, MatrixXd(static_cast<Index>(reps), N * d));
  nd.dW0rep.assign(K, MatrixXd(static_cast<Index>(reps), d));
  nd.X0.resize(static_cast<Index>(reps) * N, n);
  for (std::size_t r = 0; r < reps; ++r) {
    const std::uint64_t kc = rng::stream_key(seed, rng::Role::Common, r);
    const std::uint64_t ki = rng::stream_key(seed, rng::Role::Idiosyncratic, r);
    const Index base = static_cast<Index>(r) * N;
    for (std::size_t k = 0; k < K; ++k) {
      for (Index j = 0; j < d; ++j)
        nd.dW0rep[k](static_cast<Index>(r), j) =
            sdt * rng::standard_normal(kc, 0, k, static_cast<std::uint32_t>(j));
      for (Index i = 0; i < N; ++i)
        for (Index j = 0; j < d; ++j) {
          const double inc =
              sdt * rng::standard_normal(ki, static_cast<std::uint64_t>(stream(i)), k,
                                         static_cast<std::uint32_t>(j));
          nd.dWrows[k](base + i, j) = inc;
          nd.dWrep[k](static_cast<Index>(r), i * d + j) = inc;
        }
    }
    if (mu0.kind == InitialLaw::Kind::PointMass) {
      nd.X0.middleRows(base, N).rowwise() = mu0.mean.transpose();
    } else {
      const std::uint64_t k0 = rng::stream_key(seed, rng::Role::Initial, r);
      VectorXd g(n);
      for (Index i = 0; i < N; ++i) {
        for (Index c = 0; c < n; ++c)
          g(c) = rng::standard_normal(k0, static_cast<std::uint64_t>(stream(i)), 0,
                                      static_cast<std::uint32_t>(c));
        nd.X0.row(base + i) = (mu0.mean + mu0.cov_chol * g).transpose();
      }
    }
  }
  return nd;
}

// Adjoint slices of one step, stored repetition-major: row r, column group
// (i*N+j) of width n (Y) or n*d (Z, Z0).
struct Slices {
  MatrixXd Y;    // R x (N*N*n)
  MatrixXd Zjj;  // R x (N*N*n*d)   Z^{i,j,j}
  MatrixXd Zik;  // R x (N*N*n*d)   Z^{i,i,m}
  MatrixXd Z0;   // R x (N*N*n*d)   Z0^{i,j}
};

struct GuessPath {
  std::vector<MatrixXd> Ydiag, Zdiag, Z0diag, zeta;  // K+1 entries, (R*N) x *
};

class NeSolver {
 public:
  NeSolver(const CoefficientSet& cs, const InitialLaw& mu0, std::uint64_t seed,
           const NeConfig& cfg)
      : cs_(cs),
        cfg_(cfg),
        grid_(cs.grid),
        n_(cs.n),
        l_(cs.l),
        d_(cs.d),
        N_(cfg.players),
        R_(cfg.repetitions),
        K_(cs.grid.steps),
        noise_(make_noise(cs.grid, cfg.repetitions, cfg.players, cs.d, mu0, seed,
                          cfg.stream_permutation)) {
    if (N_ < 1 || N_ > 32) throw ConfigError("ne_picard_solve: players must be in [1, 32]");
    if (R_ < 1 || R_ > 512)
      throw ConfigError("ne_picard_solve: repetitions must be in [1, 512]");
    if (!cs_.lq) require_generic_slots();
    require_nu_slots(cs_);
    if (cfg.store_full_adjoints &&
        static_cast<double>(R_) * N_ * N_ * (K_ + 1) * n_ * (1 + 2 * d_) > 4e7)
      throw ConfigError("ne_picard_solve: full adjoint storage requested for too large a run");

    const Index rows = static_cast<Index>(R_) * N_;
    guess_.Ydiag.assign(K_ + 1, MatrixXd::Zero(rows, n_));
    guess_.Zdiag.assign(K_ + 1, MatrixXd::Zero(rows, n_ * d_));
    guess_.Z0diag.assign(K_ + 1, MatrixXd::Zero(rows, n_ * d_));
    guess_.zeta.assign(K_ + 1, MatrixXd::Zero(rows, l_));
  }

  NeSolution solve(std::uint64_t seed) {
    NeSolution sol;
    sol.grid = grid_;
    sol.n = n_;
    sol.l = l_;
    sol.d = d_;
    sol.players = N_;
    sol.repetitions = R_;
    sol.seed = seed;
    try {
      forward(guess_, X_, alpha_);
      for (std::size_t m = 0; m < cfg_.max_iters; ++m) {
        GuessPath raw = backward(false, nullptr);
        GuessPath next = blend(guess_, raw, cfg_.damping);
        std::vector<MatrixXd> Xn, alphan;
        forward(next, Xn, alphan);
        const double res = distance(guess_, X_, next, Xn);
        guess_ = std::move(next);
        X_ = std::move(Xn);
        alpha_ = std::move(alphan);
        sol.residual_history.push_back(res);
        if (res <= cfg_.tol) {
          sol.converged = true;
          break;
        }
      }
    } catch (const SolverError&) {
      sol.converged = false;
    }
    sol.iterations = sol.residual_history.size();
    sol.ridge_used = ridge_used_;
    if (sol.converged && cfg_.store_full_adjoints) {
      full_ = FullStore{};
      full_->Y.assign(K_ + 1, MatrixXd());
      full_->Zjj.assign(K_ + 1, MatrixXd());
      full_->Z0.assign(K_ + 1, MatrixXd());
      backward(true, &*full_);  // one more sweep, recording the slices
    }
    sol.X = std::move(X_);
    sol.alpha = std::move(alpha_);
    sol.Ydiag = std::move(guess_.Ydiag);
    sol.Zdiag = std::move(guess_.Zdiag);
    sol.Z0diag = std::move(guess_.Z0diag);
    sol.zeta = std::move(guess_.zeta);
    if (full_) {
      sol.Yfull = std::move(full_->Y);
      sol.Zjj = std::move(full_->Zjj);
      sol.Z0full = std::move(full_->Z0);
    }
    return sol;
  }

 private:
  struct FullStore {
    std::vector<MatrixXd> Y, Zjj, Z0;
  };

  void require_generic_slots() const {
    if (!(cs_.dx_f && cs_.da_f && cs_.dx_g && cs_.dmu_f && cs_.dmu_g && cs_.dx_b_adj &&
          cs_.da_b_adj && cs_.dx_sigma_adj && cs_.da_sigma_adj && cs_.dx_sigma0_adj &&
          cs_.da_sigma0_adj && cs_.dmu_b_adj && cs_.dmu_sigma_adj && cs_.dmu_sigma0_adj &&
          cs_.b && cs_.sigma && cs_.sigma0))
      throw UnsupportedError(
          "ne_picard_solve: non-LQ models must provide every coefficient and derivative slot");
  }

  // ---- forward -------------------------------------------------------------

  void controls(std::size_t k, const MatrixXd& Xk, const GuessPath& g, MatrixXd& alpha) const {
    if (cs_.lq) {
      const LQCoefficients& lq = *cs_.lq;
      const MatrixXd combo = g.Ydiag[k] * lq.B.at(k) + g.Zdiag[k] * lq.D.at(k) +
                             g.Z0diag[k] * lq.D0.at(k);
      alpha = -lq.P.at(k)
                   .ldlt()
                   .solve((lq.c1 * combo + g.zeta[k]).transpose())
                   .transpose();
      return;
    }
    const double t = grid_.t(k);
    alpha.resize(Xk.rows(), l_);
    for (std::size_t r = 0; r < R_; ++r) {
      const Index base = static_cast<Index>(r) * N_;
      EmpiricalMeasure mu;
      mu.points = Xk.middleRows(base, N_);
      for (Index i = 0; i < N_; ++i) {
        const Index row = base + i;
        Theta th;
        th.x = Xk.row(row).transpose();
        th.y = g.Ydiag[k].row(row).transpose();
        th.z = unflatten_matrix(g.Zdiag[k].row(row).transpose(), n_, d_);
        th.z0 = unflatten_matrix(g.Z0diag[k].row(row).transpose(), n_, d_);
        alpha.row(row) = minimize_H(cs_, t, th, mu, g.zeta[k].row(row).transpose()).transpose();
      }
    }
  }

  void forward(const GuessPath& g, std::vector<MatrixXd>& X, std::vector<MatrixXd>& alpha) const {
    const Index rows = static_cast<Index>(R_) * N_;
    const double dt = grid_.dt();
    X.assign(K_ + 1, MatrixXd());
    alpha.assign(K_ + 1, MatrixXd());
    X[0] = noise_.X0;
    for (std::size_t k = 0; k < K_; ++k) {
      controls(k, X[k], g, alpha[k]);
      MatrixXd b(rows, n_), sigma(rows, n_ * d_), sigma0(rows, n_ * d_);
      if (cs_.lq) {
        const LQCoefficients& lq = *cs_.lq;
        MatrixXd u = lq.c1 * alpha[k] - lq.c2 * expand_rep(rep_means(alpha[k], R_, N_), N_);
        b = X[k] * lq.A.at(k).transpose() + u * lq.B.at(k).transpose();
        sigma = X[k] * lq.C.at(k).transpose() + u * lq.D.at(k).transpose();
        sigma0 = X[k] * lq.C0.at(k).transpose() + u * lq.D0.at(k).transpose();
      } else {
        const double t = grid_.t(k);
        for (std::size_t r = 0; r < R_; ++r) {
          const Index base = static_cast<Index>(r) * N_;
          EmpiricalMeasure mu, nu;
          mu.points = X[k].middleRows(base, N_);
          nu.points = alpha[k].middleRows(base, N_);
          for (Index i = 0; i < N_; ++i) {
            const Index row = base + i;
            const VectorXd x = X[k].row(row).transpose();
            const VectorXd a = alpha[k].row(row).transpose();
            b.row(row) = cs_.b(t, x, a, mu, nu).transpose();
            sigma.row(row) = flatten_matrix(cs_.sigma(t, x, a, mu, nu)).transpose();
            sigma0.row(row) = flatten_matrix(cs_.sigma0(t, x, a, mu, nu)).transpose();
          }
        }
      }
      X[k + 1] = X[k] + dt * b;
      for (std::size_t r = 0; r < R_; ++r) {
        const Index base = static_cast<Index>(r) * N_;
        for (Index j = 0; j < d_; ++j)
          for (Index c = 0; c < n_; ++c)
            X[k + 1].block(base, c, N_, 1) +=
                sigma.block(base, j * n_ + c, N_, 1)
                    .cwiseProduct(noise_.dWrows[k].block(base, j, N_, 1)) +
                sigma0.block(base, j * n_ + c, N_, 1) *
                    noise_.dW0rep[k](static_cast<Index>(r), j);
      }
      if (!X[k + 1].allFinite() || X[k + 1].cwiseAbs().maxCoeff() > cfg_.guard)
        throw SolverError("N-player forward step " + std::to_string(k) +
                          ": state diverged or non-finite");
    }
    controls(K_, X[K_], g, alpha[K_]);
  }

  // ---- backward ------------------------------------------------------------

  // Terminal slice Y^{i,j}_K, repetition-major.
  MatrixXd terminal_slice(const MatrixXd& XK) const {
    MatrixXd Y(static_cast<Index>(R_), N_ * N_ * n_);
    if (cs_.lq) {
      const LQCoefficients& lq = *cs_.lq;
      const MatrixXd xbar = rep_means(XK, R_, N_);
      for (std::size_t r = 0; r < R_; ++r) {
        const Index base = static_cast<Index>(r) * N_;
        const VectorXd xb = xbar.row(static_cast<Index>(r)).transpose();
        for (Index i = 0; i < N_; ++i) {
          const VectorXd x = XK.row(base + i).transpose();
          const VectorXd xc = x - lq.ST * xb;
          const VectorXd diag = lq.QT * x + lq.QbarT * xc;
          const VectorXd corr =
              -(1.0 / static_cast<double>(N_)) * lq.ST.transpose() * lq.QbarT * xc;
          for (Index j = 0; j < N_; ++j) {
            VectorXd v = corr;
            if (i == j) v += diag;
            Y.block(static_cast<Index>(r), (i * N_ + j) * n_, 1, n_) = v.transpose();
          }
        }
      }
      return Y;
    }
    for (std::size_t r = 0; r < R_; ++r) {
      const Index base = static_cast<Index>(r) * N_;
      EmpiricalMeasure mu;
      mu.points = XK.middleRows(base, N_);
      for (Index i = 0; i < N_; ++i) {
        const VectorXd x = XK.row(base + i).transpose();
        const VectorXd diag = cs_.dx_g(x, mu);
        for (Index j = 0; j < N_; ++j) {
          VectorXd v = (1.0 / static_cast<double>(N_)) *
                       cs_.dmu_g(x, mu, XK.row(base + j).transpose());
          if (i == j) v += diag;
          Y.block(static_cast<Index>(r), (i * N_ + j) * n_, 1, n_) = v.transpose();
        }
      }
    }
    return Y;
  }

  MatrixXd regression_features(const MatrixXd& Xk) const {
    MatrixXd phi(static_cast<Index>(R_), 1 + N_ * n_);
    phi.col(0).setOnes();
    for (std::size_t r = 0; r < R_; ++r)
      for (Index j = 0; j < N_; ++j)
        phi.block(static_cast<Index>(r), 1 + j * n_, 1, n_) =
            Xk.row(static_cast<Index>(r) * N_ + j);
    return phi;
  }

  // Driver d_{x_j} H^{N,i} at the fitted slices; returns repetition-major
  // (R x N*N*n).
  MatrixXd driver(std::size_t k, const MatrixXd& Xk, const MatrixXd& alphak,
                  const Slices& s) const {
    MatrixXd Dr = MatrixXd::Zero(static_cast<Index>(R_), N_ * N_ * n_);
    if (cs_.lq) {
      const LQCoefficients& lq = *cs_.lq;
      const Eigen::MatrixXd A = lq.A.at(k), C = lq.C.at(k), C0 = lq.C0.at(k), Q = lq.Q.at(k),
                            Qbar = lq.Qbar.at(k), S = lq.S.at(k);
      for (Index g = 0; g < N_ * N_; ++g)
        Dr.middleCols(g * n_, n_) = s.Y.middleCols(g * n_, n_) * A +
                                    s.Zjj.middleCols(g * n_ * d_, n_ * d_) * C +
                                    s.Z0.middleCols(g * n_ * d_, n_ * d_) * C0;
      const MatrixXd xbar = rep_means(Xk, R_, N_);
      for (std::size_t r = 0; r < R_; ++r) {
        const Index base = static_cast<Index>(r) * N_;
        const VectorXd xb = xbar.row(static_cast<Index>(r)).transpose();
        for (Index i = 0; i < N_; ++i) {
          const VectorXd x = Xk.row(base + i).transpose();
          const VectorXd xc = x - S * xb;
          const VectorXd diag = Q * x + Qbar * xc;
          const VectorXd corr =
              -(1.0 / static_cast<double>(N_)) * S.transpose() * Qbar * xc;
          for (Index j = 0; j < N_; ++j) {
            auto blk = Dr.block(static_cast<Index>(r), (i * N_ + j) * n_, 1, n_);
            blk += corr.transpose();
            if (i == j) blk += diag.transpose();
          }
        }
      }
      return Dr;
    }
    const double t = grid_.t(k);
    for (std::size_t r = 0; r < R_; ++r) {
      const Index base = static_cast<Index>(r) * N_;
      const Index rr = static_cast<Index>(r);
      EmpiricalMeasure mu, nu;
      mu.points = Xk.middleRows(base, N_);
      nu.points = alphak.middleRows(base, N_);
      for (Index i = 0; i < N_; ++i) {
        const VectorXd xi = Xk.row(base + i).transpose();
        const VectorXd ai = alphak.row(base + i).transpose();
        const VectorXd dxf = cs_.dx_f(t, xi, ai, mu, nu);
        for (Index j = 0; j < N_; ++j) {
          const VectorXd xj = Xk.row(base + j).transpose();
          const VectorXd aj = alphak.row(base + j).transpose();
          const VectorXd yij = s.Y.block(rr, (i * N_ + j) * n_, 1, n_).transpose();
          const Eigen::MatrixXd zjj =
              unflatten_matrix(s.Zjj.block(rr, (i * N_ + j) * n_ * d_, 1, n_ * d_).transpose(),
                               n_, d_);
          const Eigen::MatrixXd z0ij =
              unflatten_matrix(s.Z0.block(rr, (i * N_ + j) * n_ * d_, 1, n_ * d_).transpose(),
                               n_, d_);
          VectorXd v = cs_.dx_b_adj(t, xj, aj, mu, nu, yij) +
                       cs_.dx_sigma_adj(t, xj, aj, mu, nu, zjj) +
                       cs_.dx_sigma0_adj(t, xj, aj, mu, nu, z0ij) +
                       (1.0 / static_cast<double>(N_)) * cs_.dmu_f(t, xi, ai, mu, nu, xj);
          if (i == j) v += dxf;
          for (Index m = 0; m < N_; ++m) {
            const VectorXd xm = Xk.row(base + m).transpose();
            const VectorXd am = alphak.row(base + m).transpose();
            const VectorXd yim = s.Y.block(rr, (i * N_ + m) * n_, 1, n_).transpose();
            const Eigen::MatrixXd zmm = unflatten_matrix(
                s.Zjj.block(rr, (i * N_ + m) * n_ * d_, 1, n_ * d_).transpose(), n_, d_);
            const Eigen::MatrixXd z0im = unflatten_matrix(
                s.Z0.block(rr, (i * N_ + m) * n_ * d_, 1, n_ * d_).transpose(), n_, d_);
            v += (1.0 / static_cast<double>(N_)) *
                 (cs_.dmu_b_adj(t, xm, am, mu, nu, xj, yim) +
                  cs_.dmu_sigma_adj(t, xm, am, mu, nu, xj, zmm) +
                  cs_.dmu_sigma0_adj(t, xm, am, mu, nu, xj, z0im));
          }
          Dr.block(rr, (i * N_ + j) * n_, 1, n_) = v.transpose();
        }
      }
    }
    return Dr;
  }

  // zeta field at the fitted slices; (R*N) x l.
  MatrixXd zeta_field(std::size_t k, const MatrixXd& Xk, const MatrixXd& alphak,
                      const Slices& s) const {
    const Index rows = static_cast<Index>(R_) * N_;
    if (cs_.lq) {
      const LQCoefficients& lq = *cs_.lq;
      MatrixXd SY(rows, n_), SZ(rows, n_ * d_), SZ0(rows, n_ * d_);
      for (std::size_t r = 0; r < R_; ++r) {
        const Index rr = static_cast<Index>(r);
        for (Index i = 0; i < N_; ++i) {
          Eigen::RowVectorXd sy = Eigen::RowVectorXd::Zero(n_);
          Eigen::RowVectorXd sz = Eigen::RowVectorXd::Zero(n_ * d_);
          Eigen::RowVectorXd sz0 = Eigen::RowVectorXd::Zero(n_ * d_);
          for (Index j = 0; j < N_; ++j) {
            sy += s.Y.block(rr, (i * N_ + j) * n_, 1, n_);
            sz += s.Zjj.block(rr, (i * N_ + j) * n_ * d_, 1, n_ * d_);
            sz0 += s.Z0.block(rr, (i * N_ + j) * n_ * d_, 1, n_ * d_);
          }
          const Index row = rr * N_ + i;
          SY.row(row) = sy;
          SZ.row(row) = sz;
          SZ0.row(row) = sz0;
        }
      }
      const double invN = 1.0 / static_cast<double>(N_);
      const MatrixXd abar = expand_rep(rep_means(alphak, R_, N_), N_);
      return invN * abar * lq.Pbar.at(k).transpose() -
             (lq.c2 * invN) * (SY * lq.B.at(k) + SZ * lq.D.at(k) + SZ0 * lq.D0.at(k));
    }
    MatrixXd zeta(rows, l_);
    for (std::size_t r = 0; r < R_; ++r) {
      const Index rr = static_cast<Index>(r);
      const Index base = rr * N_;
      zeta.middleRows(base, N_) =
          zeta_eval(cs_, k, Xk.middleRows(base, N_), alphak.middleRows(base, N_),
                    reshape_slice(s.Y, rr, n_), reshape_slice(s.Zjj, rr, n_ * d_),
                    reshape_slice(s.Z0, rr, n_ * d_));
    }
    return zeta;
  }

  // One repetition's slice as (N*N) x w rows.
  MatrixXd reshape_slice(const MatrixXd& s, Index r, Index w) const {
    MatrixXd out(N_ * N_, w);
    for (Index g = 0; g < N_ * N_; ++g) out.row(g) = s.block(r, g * w, 1, w);
    return out;
  }

  GuessPath backward(bool record, FullStore* full) {
    const Index rows = static_cast<Index>(R_) * N_;
    const double dt = grid_.dt();
    GuessPath out;
    out.Ydiag.assign(K_ + 1, MatrixXd::Zero(rows, n_));
    out.Zdiag.assign(K_ + 1, MatrixXd::Zero(rows, n_ * d_));
    out.Z0diag.assign(K_ + 1, MatrixXd::Zero(rows, n_ * d_));
    out.zeta.assign(K_ + 1, MatrixXd::Zero(rows, l_));

    MatrixXd Ynext = terminal_slice(X_[K_]);
    {
      Slices sK;
      sK.Y = Ynext;
      sK.Zjj = MatrixXd::Zero(static_cast<Index>(R_), N_ * N_ * n_ * d_);
      sK.Zik = sK.Zjj;
      sK.Z0 = sK.Zjj;
      extract_diagonals(sK, out, K_);
      out.zeta[K_] = zeta_field(K_, X_[K_], alpha_[K_], sK);
      if (record && full) store_full(*full, K_, sK);
    }

    const Index nd = n_ * d_;
    for (std::size_t k = K_; k-- > 0;) {
      const MatrixXd phi = regression_features(X_[k]);
      StepRegression reg(phi);
      ridge_used_ = ridge_used_ || reg.ridge_used;

      const Index cY = N_ * N_ * n_, cZ = N_ * N_ * nd;
      const MatrixXd Yfit = phi * reg.ldlt.solve(phi.transpose() * Ynext / reg.rows);
      // Martingale-difference targets: the fitted conditional mean contributes
      // nothing to the integrands but would dominate the regression noise.
      const MatrixXd Yres = Ynext - Yfit;
      MatrixXd targets(static_cast<Index>(R_), 3 * cZ);
      for (Index i = 0; i < N_; ++i)
        for (Index j = 0; j < N_; ++j)
          for (Index jj = 0; jj < d_; ++jj)
            for (Index c = 0; c < n_; ++c) {
              const Index g = i * N_ + j;
              // Z^{i,j,j}: pair with player j's own increment.
              targets.col(g * nd + jj * n_ + c) =
                  Yres.col(g * n_ + c)
                      .cwiseProduct(noise_.dWrep[k].col(j * d_ + jj)) /
                  dt;
              // Z^{i,i,j}: diagonal Y against player j's increment.
              targets.col(cZ + g * nd + jj * n_ + c) =
                  Yres.col((i * N_ + i) * n_ + c)
                      .cwiseProduct(noise_.dWrep[k].col(j * d_ + jj)) /
                  dt;
              // Z0^{i,j}: pair with the common increment.
              targets.col(2 * cZ + g * nd + jj * n_ + c) =
                  Yres.col(g * n_ + c).cwiseProduct(noise_.dW0rep[k].col(jj)) / dt;
            }
      const MatrixXd fitted = phi * reg.ldlt.solve(phi.transpose() * targets / reg.rows);

      Slices s;
      s.Y = Yfit;
      s.Zjj = fitted.leftCols(cZ);
      s.Zik = fitted.middleCols(cZ, cZ);
      s.Z0 = fitted.rightCols(cZ);

      Ynext = s.Y + dt * driver(k, X_[k], alpha_[k], s);
      // Iterate value Y_k carries the driver increment; refresh the Y slice.
      Slices sk = s;
      sk.Y = Ynext;
      extract_diagonals(sk, out, k);
      out.zeta[k] = zeta_field(k, X_[k], alpha_[k], sk);
      if (record && full) store_full(*full, k, sk);
    }
    return out;
  }

  void extract_diagonals(const Slices& s, GuessPath& out, std::size_t k) const {
    for (std::size_t r = 0; r < R_; ++r) {
      const Index rr = static_cast<Index>(r);
      for (Index i = 0; i < N_; ++i) {
        const Index row = rr * N_ + i;
        const Index g = i * N_ + i;
        out.Ydiag[k].row(row) = s.Y.block(rr, g * n_, 1, n_);
        out.Zdiag[k].row(row) = s.Zjj.block(rr, g * n_ * d_, 1, n_ * d_);
        out.Z0diag[k].row(row) = s.Z0.block(rr, g * n_ * d_, 1, n_ * d_);
      }
    }
  }

  void store_full(FullStore& full, std::size_t k, const Slices& s) const {
    const Index nd = n_ * d_;
    full.Y[k].resize(static_cast<Index>(R_) * N_ * N_, n_);
    full.Zjj[k].resize(static_cast<Index>(R_) * N_ * N_, nd);
    full.Z0[k].resize(static_cast<Index>(R_) * N_ * N_, nd);
    for (std::size_t r = 0; r < R_; ++r) {
      const Index rr = static_cast<Index>(r);
      for (Index g = 0; g < N_ * N_; ++g) {
        full.Y[k].row(rr * N_ * N_ + g) = s.Y.block(rr, g * n_, 1, n_);
        full.Zjj[k].row(rr * N_ * N_ + g) = s.Zjj.block(rr, g * nd, 1, nd);
        full.Z0[k].row(rr * N_ * N_ + g) = s.Z0.block(rr, g * nd, 1, nd);
      }
    }
  }

  static GuessPath blend(const GuessPath& a, const GuessPath& b, double rho) {
    GuessPath out;
    const std::size_t K1 = a.Ydiag.size();
    out.Ydiag.resize(K1);
    out.Zdiag.resize(K1);
    out.Z0diag.resize(K1);
    out.zeta.resize(K1);
    for (std::size_t k = 0; k < K1; ++k) {
      out.Ydiag[k] = (1.0 - rho) * a.Ydiag[k] + rho * b.Ydiag[k];
      out.Zdiag[k] = (1.0 - rho) * a.Zdiag[k] + rho * b.Zdiag[k];
      out.Z0diag[k] = (1.0 - rho) * a.Z0diag[k] + rho * b.Z0diag[k];
      out.zeta[k] = (1.0 - rho) * a.zeta[k] + rho * b.zeta[k];
    }
    return out;
  }

  double distance(const GuessPath& g1, const std::vector<MatrixXd>& X1, const GuessPath& g2,
                  const std::vector<MatrixXd>& X2) const {
    const double dt = grid_.dt();
    const double rows = static_cast<double>(X1[0].rows());
    double acc = 0.0;
    for (std::size_t k = 0; k < K_; ++k)
      acc += dt *
             ((X1[k] - X2[k]).squaredNorm() + (g1.Ydiag[k] - g2.Ydiag[k]).squaredNorm() +
              (g1.Zdiag[k] - g2.Zdiag[k]).squaredNorm() +
              (g1.Z0diag[k] - g2.Z0diag[k]).squaredNorm() +
              (g1.zeta[k] - g2.zeta[k]).squaredNorm()) /
             rows;
    return acc;
  }

  const CoefficientSet& cs_;
  NeConfig cfg_;
  TimeGrid grid_;
  Index n_, l_, d_, N_;
  std::size_t R_, K_;
  NoiseData noise_;
  GuessPath guess_;
  std::vector<MatrixXd> X_, alpha_;
  bool ridge_used_ = false;
  std::optional<FullStore> full_;
};

}  // namespace

Eigen::MatrixXd zeta_eval(const CoefficientSet& coeffs, std::size_t node,
                          const Eigen::MatrixXd& X, const Eigen::MatrixXd& alpha,
                          const Eigen::MatrixXd& Yfull, const Eigen::MatrixXd& Zjj,
                          const Eigen::MatrixXd& Z0full) {
  require_nu_slots(coeffs);
  const Index N = X.rows(), n = coeffs.n, d = coeffs.d;
  if (Yfull.rows() != N * N || Zjj.rows() != N * N || Z0full.rows() != N * N)
    throw ConfigError("zeta_eval: slice shapes must be (N*N) x *");
  const double t = coeffs.grid.t(node);
  const double invN = 1.0 / static_cast<double>(N);
  EmpiricalMeasure mu, nu;
  mu.points = X;
  nu.points = alpha;
  MatrixXd zeta(N, coeffs.l);
  for (Index i = 0; i < N; ++i) {
    const VectorXd xi = X.row(i).transpose();
    const VectorXd ai = alpha.row(i).transpose();
    VectorXd z = coeffs.dnu_f2(t, xi, mu, nu, ai);
    for (Index j = 0; j < N; ++j) {
      const VectorXd yij = Yfull.row(i * N + j).transpose();
      const Eigen::MatrixXd zij = unflatten_matrix(Zjj.row(i * N + j).transpose(), n, d);
      const Eigen::MatrixXd z0ij = unflatten_matrix(Z0full.row(i * N + j).transpose(), n, d);
      z += coeffs.dnu_b2_adj(t, xi, mu, nu, ai, yij) +
           coeffs.dnu_sigma2_adj(t, xi, mu, nu, ai, zij) +
           coeffs.dnu_sigma02_adj(t, xi, mu, nu, ai, z0ij);
    }
    zeta.row(i) = (invN * z).transpose();
  }
  return zeta;
}

NeSolution ne_picard_solve(const CoefficientSet& coeffs, const InitialLaw& mu0,
                           std::uint64_t seed, const NeConfig& cfg) {
  NeSolver solver(coeffs, mu0, seed, cfg);
  return solver.solve(seed);
}

ThetaCloud NeSolution::player_theta(std::size_t rep, std::size_t k) const {
  if (rep >= repetitions) throw IndexError("player_theta: repetition out of range");
  if (k >= X.size()) throw IndexError("player_theta: step out of range");
  const Index base = static_cast<Index>(rep) * players;
  return ThetaCloud{X[k].middleRows(base, players), Ydiag[k].middleRows(base, players),
                    Zdiag[k].middleRows(base, players), Z0diag[k].middleRows(base, players)};
}

Eigen::MatrixXd NeSolution::player_alpha(std::size_t rep, std::size_t k) const {
  if (rep >= repetitions) throw IndexError("player_alpha: repetition out of range");
  if (k >= alpha.size()) throw IndexError("player_alpha: step out of range");
  return alpha[k].middleRows(static_cast<Index>(rep) * players, players);
}

double ne_residual(const CoefficientSet& coeffs, const NeSolution& sol) {
  const std::size_t K = sol.grid.steps;
  double worst = 0.0;
  if (coeffs.lq) {
    const LQCoefficients& lq = *coeffs.lq;
    for (std::size_t k = 0; k < K; ++k) {
      const MatrixXd combo = sol.Ydiag[k] * lq.B.at(k) + sol.Zdiag[k] * lq.D.at(k) +
                             sol.Z0diag[k] * lq.D0.at(k);
      const MatrixXd res =
          sol.alpha[k] * lq.P.at(k).transpose() + lq.c1 * combo + sol.zeta[k];
      worst = std::max(worst, res.rowwise().norm().maxCoeff());
    }
    return worst;
  }
  const Index N = sol.players;
  for (std::size_t k = 0; k < K; ++k) {
    const double t = sol.grid.t(k);
    for (std::size_t r = 0; r < sol.repetitions; ++r) {
      const Index base = static_cast<Index>(r) * N;
      EmpiricalMeasure mu, nu;
      mu.points = sol.X[k].middleRows(base, N);
      nu.points = sol.alpha[k].middleRows(base, N);
      for (Index i = 0; i < N; ++i) {
        const Index row = base + i;
        const VectorXd x = sol.X[k].row(row).transpose();
        const VectorXd a = sol.alpha[k].row(row).transpose();
        const Eigen::MatrixXd z =
            unflatten_matrix(sol.Zdiag[k].row(row).transpose(), sol.n, sol.d);
        const Eigen::MatrixXd z0 =
            unflatten_matrix(sol.Z0diag[k].row(row).transpose(), sol.n, sol.d);
        const VectorXd res = coeffs.da_f(t, x, a, mu, nu) +
                             coeffs.da_b_adj(t, x, a, mu, nu,
                                             sol.Ydiag[k].row(row).transpose()) +
                             coeffs.da_sigma_adj(t, x, a, mu, nu, z) +
                             coeffs.da_sigma0_adj(t, x, a, mu, nu, z0) +
                             sol.zeta[k].row(row).transpose();
        worst = std::max(worst, res.norm());
      }
    }
  }
  return worst;
}

}  // namespace mfg
