#include "mfglab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mfglab/errors.hpp"
#include "mfglab/measure.hpp"

namespace mfg {

CoupledCopies build_coupled_copies(MfeSolution sol, Eigen::Index players) {
  if (players < 1) throw ConfigError("build_coupled_copies: need at least one player");
  if (sol.particles < players)
    throw ConfigError("build_coupled_copies: the solution carries " +
                      std::to_string(sol.particles) + " particles per world, need " +
                      std::to_string(players));

  CoupledCopies copies;
  copies.mfe = std::move(sol);
  copies.players = players;
  const MfeSolution& mfe = copies.mfe;
  const std::size_t K = mfe.grid.steps;
  const std::size_t W = mfe.worlds;
  const Eigen::Index M = mfe.particles;

  copies.X.resize(K + 1);
  copies.alpha.resize(K + 1);
  for (std::size_t k = 0; k <= K; ++k) {
    copies.X[k].resize(static_cast<Eigen::Index>(W) * players, mfe.n);
    copies.alpha[k].resize(static_cast<Eigen::Index>(W) * players, mfe.l);
    for (std::size_t w = 0; w < W; ++w) {
      const Eigen::Index dst = static_cast<Eigen::Index>(w) * players;
      copies.X[k].middleRows(dst, players) =
          mfe.X[k].middleRows(static_cast<Eigen::Index>(w) * M, players);
      copies.alpha[k].middleRows(dst, players) = mfe.alpha_at(w, k).topRows(players);
    }
  }
  return copies;
}

CoupledCopies build_coupled_copies(const CoefficientSet& coeffs, const InitialLaw& mu0,
                                   std::uint64_t seed, const MkvConfig& mkv_cfg,
                                   Eigen::Index players) {
  if (mkv_cfg.particles < players)
    throw ConfigError("build_coupled_copies: auxiliary cloud smaller than the player count");
  return build_coupled_copies(solve_mfe(make_reduced_model(coeffs), mu0, seed, mkv_cfg), players);
}

namespace {

ThetaCloud head_cloud(const ThetaCloud& cloud, Eigen::Index m) {
  return ThetaCloud{cloud.X.topRows(m), cloud.Y.topRows(m), cloud.Z.topRows(m),
                    cloud.Z0.topRows(m)};
}

}  // namespace

GapReport gap_metrics(const CoefficientSet& coeffs, const CoupledCopies& copies,
                      const NeSolution& ne) {
  const MfeSolution& mfe = copies.mfe;
  if (mfe.grid.steps != ne.grid.steps || mfe.grid.horizon != ne.grid.horizon)
    throw ConfigError("gap_metrics: grids differ between the copies and the N-player solve");
  if (copies.players != ne.players)
    throw ConfigError("gap_metrics: player counts differ");
  if (mfe.worlds != ne.repetitions)
    throw ConfigError("gap_metrics: worlds and repetitions differ");
  if (mfe.seed != ne.seed)
    throw ConfigError("gap_metrics: noise seeds differ, the systems are not coupled");
  if (mfe.n != ne.n || mfe.l != ne.l || mfe.d != ne.d)
    throw ConfigError("gap_metrics: dimension mismatch");

  const std::size_t K = mfe.grid.steps;
  const double dt = mfe.grid.dt();
  const Eigen::Index N = copies.players;
  const std::size_t W = mfe.worlds;
  const Eigen::Index rows = static_cast<Eigen::Index>(W) * N;

  GapReport report;
  report.N = N;

  Eigen::VectorXd state_max = Eigen::VectorXd::Zero(rows);
  Eigen::VectorXd control_sum = Eigen::VectorXd::Zero(rows);
  for (std::size_t k = 0; k <= K; ++k) {
    const Eigen::VectorXd dx = (copies.X[k] - ne.X[k]).rowwise().squaredNorm();
    state_max = state_max.cwiseMax(dx);
    if (k < K)
      control_sum += dt * (copies.alpha[k] - ne.alpha[k]).rowwise().squaredNorm();
  }
  report.state_gap = state_max.mean();
  report.control_gap = control_sum.mean();

  // Error diagnostics along the copies: coefficient evaluated at the players'
  // empirical law minus at the world's conditional law, plus the finite-
  // population measure-derivative corrections.
  const ReducedModel& model = *mfe.model;
  const double inv = 1.0 / static_cast<double>(rows);
  const Eigen::Index nn = mfe.n, dd = mfe.d;
  for (std::size_t w = 0; w < W; ++w) {
    const Eigen::Index base = static_cast<Eigen::Index>(w) * N;
    for (std::size_t k = 0; k < K; ++k) {
      const ThetaCloud full = mfe.theta_at(w, k);
      const ThetaCloud cp = head_cloud(full, N);
      Eigen::MatrixXd BN, SN, S0N, FN, B1, S1, S01, F1;
      model.eval(k, cp, cp, &BN, &SN, &S0N, &FN);
      model.eval(k, cp, full, &B1, &S1, &S01, &F1);

      Eigen::MatrixXd EF = FN - F1;
      if (coeffs.dmu_f || coeffs.dmu_b_adj || coeffs.dmu_sigma_adj || coeffs.dmu_sigma0_adj) {
        const double t = mfe.grid.t(k);
        EmpiricalMeasure muN, nuN;
        muN.points = cp.X;
        nuN.points = copies.alpha[k].middleRows(base, N);
        for (Eigen::Index i = 0; i < N; ++i) {
          const Theta th = cp.point(i, nn, dd);
          const Eigen::VectorXd a = nuN.points.row(i).transpose();
          Eigen::VectorXd dmu = Eigen::VectorXd::Zero(nn);
          if (coeffs.dmu_f) dmu += coeffs.dmu_f(t, th.x, a, muN, nuN, th.x);
          if (coeffs.dmu_b_adj) dmu += coeffs.dmu_b_adj(t, th.x, a, muN, nuN, th.x, th.y);
          if (coeffs.dmu_sigma_adj) dmu += coeffs.dmu_sigma_adj(t, th.x, a, muN, nuN, th.x, th.z);
          if (coeffs.dmu_sigma0_adj)
            dmu += coeffs.dmu_sigma0_adj(t, th.x, a, muN, nuN, th.x, th.z0);
          EF.row(i) += dmu.transpose() / static_cast<double>(N);
        }
      }

      report.EB += dt * inv * (BN - B1).squaredNorm();
      report.ESigma += dt * inv * (SN - S1).squaredNorm();
      report.ESigma0 += dt * inv * (S0N - S01).squaredNorm();
      report.EF += dt * inv * EF.squaredNorm();
    }

    const Eigen::MatrixXd XT = copies.X[K].middleRows(base, N);
    const Eigen::MatrixXd XTfull = mfe.X[K].middleRows(
        static_cast<Eigen::Index>(w) * mfe.particles, mfe.particles);
    Eigen::MatrixXd GN, G1;
    model.terminal(XT, XT, GN);
    model.terminal(XT, XTfull, G1);
    Eigen::MatrixXd EG = GN - G1;
    if (coeffs.dmu_g) {
      EmpiricalMeasure muN;
      muN.points = XT;
      for (Eigen::Index i = 0; i < N; ++i)
        EG.row(i) +=
            coeffs.dmu_g(XT.row(i).transpose(), muN, XT.row(i).transpose()).transpose() /
            static_cast<double>(N);
    }
    report.EG += inv * EG.squaredNorm();
  }
  return report;
}

RateFit fit_power_law(const std::vector<std::pair<double, double>>& points) {
  std::set<double> distinct;
  for (const auto& [N, gap] : points) {
    distinct.insert(N);
    if (!(gap > 0.0))
      throw ConfigError("rate_fit: gap at N = " + std::to_string(N) +
                        " is not positive, log-log fit undefined");
  }
  if (distinct.size() < 3) throw ConfigError("rate_fit: need at least 3 distinct N values");

  const double m = static_cast<double>(points.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [N, gap] : points) {
    const double x = std::log(N), y = std::log(gap);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  RateFit fit;
  fit.points = points;
  fit.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / m;

  double ss_res = 0, ss_tot = 0;
  const double ybar = sy / m;
  for (const auto& [N, gap] : points) {
    const double y = std::log(gap);
    const double yhat = fit.intercept + fit.slope * std::log(N);
    ss_res += (y - yhat) * (y - yhat);
    ss_tot += (y - ybar) * (y - ybar);
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return fit;
}

RateFit rate_fit(const std::vector<GapReport>& reports, GapKind which) {
  std::vector<std::pair<double, double>> points;
  points.reserve(reports.size());
  for (const GapReport& r : reports)
    points.emplace_back(static_cast<double>(r.N),
                        which == GapKind::State ? r.state_gap : r.control_gap);
  return fit_power_law(points);
}

double RiccatiSolution::value(const Eigen::VectorXd& x0) const {
  return 0.5 * x0.dot(K.front() * x0);
}

RiccatiSolution riccati_oracle(const LQCoefficients& lq, const TimeGrid& grid) {
  const std::size_t K = grid.steps;
  auto all_zero = [&](const MatrixSchedule& s) {
    for (std::size_t k = 0; k <= K; ++k)
      if (s.at(k).cwiseAbs().maxCoeff() != 0.0) return false;
    return true;
  };
  if (!(all_zero(lq.C) && all_zero(lq.C0) && all_zero(lq.D) && all_zero(lq.D0) &&
        all_zero(lq.Qbar) && all_zero(lq.S) && all_zero(lq.Pbar) && lq.c2 == 0.0 &&
        lq.QbarT.cwiseAbs().maxCoeff() == 0.0 && lq.ST.cwiseAbs().maxCoeff() == 0.0))
    throw UnsupportedError(
        "riccati_oracle: only the deterministic decoupled sub-case is supported "
        "(C = D = C0 = D0 = 0, Qbar = S = Pbar = 0, c2 = 0)");

  const double dt = grid.dt();
  RiccatiSolution sol;
  sol.K.resize(K + 1);
  sol.gain.resize(K);
  sol.K[K] = lq.QT;
  for (std::size_t k = K; k-- > 0;) {
    const Eigen::MatrixXd& Kn = sol.K[k + 1];
    const Eigen::MatrixXd& A = lq.A.at(k);
    const Eigen::MatrixXd& B = lq.B.at(k);
    const Eigen::MatrixXd BtK = lq.c1 * B.transpose() * Kn;
    const Eigen::MatrixXd inner =
        (lq.P.at(k) + dt * lq.c1 * lq.c1 * B.transpose() * Kn * B).ldlt().solve(BtK);
    Eigen::MatrixXd Kk = lq.Q.at(k) * dt + Kn + (A.transpose() * Kn + Kn * A) * dt -
                         BtK.transpose() * inner * dt;
    sol.K[k] = 0.5 * (Kk + Kk.transpose());
    // Costate feedback alpha_k = -P^{-1} c1 B' K_k x_k, the form Lambda takes
    // along Y = K x.
    sol.gain[k] = lq.P.at(k).ldlt().solve(lq.c1 * B.transpose() * sol.K[k]);
  }
  return sol;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ConfigError("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double stat = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    stat = std::max(stat, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return stat;
}

double ks_critical_1pct(std::size_t n, std::size_t m) {
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return 1.628 * std::sqrt((nn + mm) / (nn * mm));
}

}  // namespace mfg
