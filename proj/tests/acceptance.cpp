// End-to-end acceptance gate. Each numbered criterion prints exactly one
// PASS/FAIL line with its measured quantities; the exit code is the number
// of failed criteria. Runs at production scale, so expect several minutes.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mfglab/config.hpp"
#include "mfglab/hamiltonian.hpp"
#include "mfglab/harness.hpp"
#include "mfglab/measure.hpp"
#include "mfglab/mkv_solver.hpp"
#include "mfglab/model.hpp"
#include "mfglab/monotonicity.hpp"
#include "mfglab/noise.hpp"
#include "mfglab/nplayer_solver.hpp"
#include "mfglab/reduced_model.hpp"
#include "test_models.hpp"

using namespace mfg;

namespace {

int failures = 0;

void report(int num, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", num, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

template <typename Fn>
void criterion(int num, Fn&& fn) {
  try {
    const std::pair<bool, std::string> out = fn();
    report(num, out.first, out.second);
  } catch (const std::exception& e) {
    report(num, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char* pattern, double a, double b = 0, double c = 0, double d = 0) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c, d);
  return buf;
}

// Discrete H^2 path distance between two solutions on the same grid and
// ensemble, the norm the Picard iteration contracts.
double h2_distance(const MfeSolution& a, const MfeSolution& b) {
  const double dt = a.grid.dt();
  const double rows = double(a.worlds) * double(a.particles);
  double acc = 0.0;
  for (std::size_t k = 0; k < a.grid.steps; ++k)
    for (std::size_t w = 0; w < a.worlds; ++w) {
      const ThetaCloud ca = a.theta_at(w, k), cb = b.theta_at(w, k);
      acc += dt *
             ((ca.X - cb.X).squaredNorm() + (ca.Y - cb.Y).squaredNorm() +
              (ca.Z - cb.Z).squaredNorm() + (ca.Z0 - cb.Z0).squaredNorm()) /
             rows;
    }
  return acc;
}

// Criteria 1, 5 and 6 share the production-scale reference pipeline: one
// auxiliary mean-field solve whose particles serve every N, plus one
// N-player solve per configured N on the same noise streams.
struct ReferenceRuns {
  bool ready = false;
  std::string error;
  double wall_seconds = 0.0;

  RunConfig cfg;
  CoefficientSet coeffs;
  InitialLaw mu0 = InitialLaw::point_mass(Eigen::VectorXd::Zero(1));
  MfeSolution aux;

  std::vector<Eigen::Index> Ns;
  std::vector<bool> ne_converged;
  std::vector<double> ne_residuals;
  std::vector<GapReport> reports;
  std::vector<Eigen::MatrixXd> copies_X0, ne_X0;
  NeSolution largest;  // kept for the marginal tests
};

const ReferenceRuns& reference_runs() {
  static const ReferenceRuns runs = [] {
    ReferenceRuns r;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r.cfg = parse_config(testutil::config_path("reference.ini"));
      r.coeffs = lq_coefficients(r.cfg.lq(), r.cfg.grid());
      r.mu0 = r.cfg.initial_law();
      r.aux = solve_mfe(make_reduced_model(r.coeffs), r.mu0, r.cfg.seed,
                        r.cfg.mkv(r.cfg.repetitions, r.cfg.m_aux));
      if (!r.aux.converged) throw SolverError("auxiliary mean-field solve did not converge");

      for (Eigen::Index N : r.cfg.N_list) {
        const CoupledCopies copies = build_coupled_copies(r.aux, N);
        NeSolution ne = ne_picard_solve(r.coeffs, r.mu0, r.cfg.seed, r.cfg.ne(N));
        r.Ns.push_back(N);
        r.ne_converged.push_back(ne.converged);
        r.ne_residuals.push_back(ne_residual(r.coeffs, ne));
        r.copies_X0.push_back(copies.X[0]);
        r.ne_X0.push_back(ne.X[0]);
        if (!ne.converged)
          throw SolverError("N-player solve did not converge at N = " + std::to_string(N));
        r.reports.push_back(gap_metrics(r.coeffs, copies, ne));
        if (N == r.cfg.N_list.back()) r.largest = std::move(ne);
      }
      r.ready = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }();
  return runs;
}

std::pair<bool, std::string> criterion_rate() {
  const ReferenceRuns& r = reference_runs();
  if (!r.ready) return {false, "reference pipeline failed: " + r.error};

  const RateFit st = rate_fit(r.reports, GapKind::State);
  const RateFit ct = rate_fit(r.reports, GapKind::Control);
  const auto ok = [](const RateFit& f) {
    return f.slope >= -1.5 && f.slope <= -0.5 && f.r2 >= 0.8;
  };
  return {ok(st) && ok(ct),
          fmt("state slope %.3f (r2 %.3f), control slope %.3f (r2 %.3f); "
              "window [-1.5, -0.5], r2 >= 0.8",
              st.slope, st.r2, ct.slope, ct.r2) +
              fmt("; %.0f s", r.wall_seconds)};
}

std::pair<bool, std::string> criterion_riccati() {
  const RunConfig cfg = parse_config(testutil::config_path("deterministic.ini"));
  const CoefficientSet coeffs = lq_coefficients(cfg.lq(), cfg.grid());
  const MfeSolution sol =
      solve_mfe(make_reduced_model(coeffs), cfg.initial_law(), cfg.seed, cfg.mkv());
  if (!sol.converged) return {false, "deterministic solve did not converge"};

  const RiccatiSolution oracle = riccati_oracle(cfg.lq(), cfg.grid());
  const double y_ref = oracle.K[0](0, 0) * cfg.x0;
  const double a_ref = -oracle.gain[0](0, 0) * cfg.x0;
  const double y0 = sol.theta_at(0, 0).Y(0, 0);
  const double a0 = sol.alpha_at(0, 0)(0, 0);
  const double ey = std::abs(y0 - y_ref) / std::abs(y_ref);
  const double ea = std::abs(a0 - a_ref) / std::abs(a_ref);
  return {ey <= 1e-3 && ea <= 1e-3,
          fmt("Y0 rel err %.2e, alpha0 rel err %.2e vs tolerance 1e-3 at K = 400; solver and "
              "oracle are both first-order in dt with opposite-sign biases, so their mutual "
              "gap decays like 1/K and is above 1e-3 at this K",
              ey, ea)};
}

std::pair<bool, std::string> criterion_uniqueness() {
  const TimeGrid grid = make_time_grid(1.0, 20);
  const auto model =
      make_reduced_model(lq_coefficients(testutil::build_lq(testutil::reference_params()), grid));
  const auto mu0 = testutil::point1(1.0);

  MkvConfig cfg;
  cfg.worlds = 8;
  cfg.particles = 256;
  const MfeSolution from_zero = solve_mfe(model, mu0, 2024, cfg);
  MkvConfig offset = cfg;
  offset.init_offset = 0.5;
  const MfeSolution from_offset = solve_mfe(model, mu0, 2024, offset);
  MkvConfig cont = cfg;
  cont.continuation.enabled = true;
  cont.continuation.initial_step = 0.5;
  const MfeSolution continued = solve_mfe(model, mu0, 2024, cont);
  if (!from_zero.converged || !from_offset.converged || !continued.converged)
    return {false, "a solve did not converge"};

  const double d_init = h2_distance(from_zero, from_offset);
  const double d_cont = h2_distance(from_zero, continued);
  const double bound = 10.0 * cfg.picard_tol;
  return {d_init <= bound && d_cont <= bound,
          fmt("H2 distance zero-vs-offset init %.2e, continuation-vs-direct %.2e, bound %.0e",
              d_init, d_cont, bound)};
}

std::pair<bool, std::string> criterion_monotonicity() {
  const RunConfig cfg = parse_config(testutil::config_path("reference.ini"));
  const ValidationReport vrep = validate_lq(cfg.lq(), cfg.grid());
  const CoefficientSet coeffs = lq_coefficients(cfg.lq(), cfg.grid());
  const MonotonicityReport rep = certify(coeffs, cfg.trials, cfg.cloud_atoms, cfg.seed);
  const bool margins = vrep.passed && std::abs(vrep.lambda - 2.0) <= 1e-9 && rep.passed &&
                       rep.min_drift_margin >= vrep.lambda - 1e-9 &&
                       rep.min_terminal_margin >= vrep.lambda - 1e-9;

  const RunConfig bad = parse_config(testutil::config_path("broken_q.ini"));
  const CoefficientSet broken = lq_coefficients(bad.lq(), bad.grid(), /*enforce=*/false);
  const MonotonicityReport brep = certify(broken, bad.trials, bad.cloud_atoms, bad.seed);
  const bool witnessed =
      !brep.passed && (brep.drift_witness.has_value() || brep.terminal_witness.has_value());

  return {margins && witnessed,
          fmt("lambda %.12f, min drift margin %.12f, min terminal margin %.12f over %.0f "
              "trials",
              vrep.lambda, rep.min_drift_margin, rep.min_terminal_margin, double(rep.trials)) +
              (witnessed ? "; broken cost falsified with a witness"
                         : "; broken cost NOT falsified")};
}

std::pair<bool, std::string> criterion_foc() {
  const ReferenceRuns& r = reference_runs();
  if (!r.ready) return {false, "reference pipeline failed: " + r.error};

  double worst_ne = 0.0;
  for (double res : r.ne_residuals) worst_ne = std::max(worst_ne, res);

  const WorldFlow flow = extract_mfe(r.aux, 0);
  const std::size_t K = r.aux.grid.steps;
  const Eigen::Index stride = std::max<Eigen::Index>(1, r.aux.particles / 64);
  double worst_mfe = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    EmpiricalMeasure mu;
    mu.points = flow.theta[k].X;
    for (Eigen::Index i = 0; i < r.aux.particles; i += stride) {
      const Theta th = flow.theta[k].point(i, r.aux.n, r.aux.d);
      worst_mfe = std::max(
          worst_mfe, foc_residual(r.coeffs, r.aux.grid.t(k), th, mu, Eigen::VectorXd::Zero(1),
                                  flow.alpha[k].row(i).transpose()));
    }
  }
  return {worst_ne <= 1e-6 && worst_mfe <= 1e-10,
          fmt("max ne_residual %.2e (<= 1e-6) over N in {4..32}, max mean-field FOC residual "
              "%.2e (<= 1e-10)",
              worst_ne, worst_mfe)};
}

std::pair<bool, std::string> criterion_coupling() {
  const ReferenceRuns& r = reference_runs();
  if (!r.ready) return {false, "reference pipeline failed: " + r.error};

  // Shared streams: restricting a wide bundle to N players reproduces the
  // N-player bundle bit for bit, and both systems start from identical states.
  bool streams = true;
  for (std::uint64_t w : {std::uint64_t(0), std::uint64_t(7)}) {
    const NoiseBundle full = sample_noise(r.aux.grid, r.cfg.m_aux, 1, r.mu0, r.cfg.seed, w);
    const NoiseBundle cut = restrict_players(full, 32);
    const NoiseBundle direct = sample_noise(r.aux.grid, 32, 1, r.mu0, r.cfg.seed, w);
    streams = streams && cut.common == direct.common &&
              cut.idiosyncratic == direct.idiosyncratic &&
              cut.initial_states == direct.initial_states;
  }
  for (std::size_t i = 0; i < r.Ns.size(); ++i)
    streams = streams && r.copies_X0[i] == r.ne_X0[i];

  // Identical marginals across player indices: two-sample KS on the terminal
  // states over repetitions, 1% level.
  const NeSolution& big = r.largest;
  const Eigen::Index N = big.players;
  const std::size_t R = big.repetitions;
  auto terminal = [&](Eigen::Index player) {
    std::vector<double> v(R);
    for (std::size_t rep = 0; rep < R; ++rep)
      v[rep] = big.X.back()(Eigen::Index(rep) * N + player, 0);
    return v;
  };
  const double crit = ks_critical_1pct(R, R);
  double worst_ks = 0.0;
  for (auto [a, b] : {std::pair<Eigen::Index, Eigen::Index>{0, N / 2},
                      {1, N - 1},
                      {N / 4, 3 * N / 4}})
    worst_ks = std::max(worst_ks, ks_statistic(terminal(a), terminal(b)));

  // Permuting the noise streams permutes the players.
  const TimeGrid grid = make_time_grid(1.0, 10);
  const CoefficientSet cs =
      lq_coefficients(testutil::build_lq(testutil::reference_params()), grid);
  const auto mu0 = InitialLaw::gaussian(testutil::vec1(1.0),
                                        Eigen::MatrixXd::Constant(1, 1, 0.25));
  NeConfig pcfg;
  pcfg.players = 4;
  pcfg.repetitions = 32;
  pcfg.damping = 0.25;
  const NeSolution base = ne_picard_solve(cs, mu0, 17, pcfg);
  NeConfig turned = pcfg;
  turned.stream_permutation = {1, 2, 0, 3};
  const NeSolution cyc = ne_picard_solve(cs, mu0, 17, turned);
  double worst_perm = base.converged && cyc.converged ? 0.0 : 1.0;
  const std::vector<Eigen::Index> perm = {1, 2, 0, 3};
  for (std::size_t k = 0; k <= 10 && worst_perm < 1.0; ++k)
    for (std::size_t rep = 0; rep < 32; ++rep)
      for (Eigen::Index i = 0; i < 4; ++i) {
        const Eigen::Index here = Eigen::Index(rep) * 4 + i;
        const Eigen::Index there = Eigen::Index(rep) * 4 + perm[std::size_t(i)];
        worst_perm = std::max({worst_perm, std::abs(cyc.X[k](here, 0) - base.X[k](there, 0)),
                               std::abs(cyc.alpha[k](here, 0) - base.alpha[k](there, 0)),
                               std::abs(cyc.zeta[k](here, 0) - base.zeta[k](there, 0))});
      }

  return {streams && worst_ks <= crit && worst_perm <= 1e-12,
          std::string(streams ? "streams bit-exact" : "streams NOT bit-exact") +
              fmt("; worst KS %.4f (critical %.4f at 1%%), worst 3-cycle mismatch %.1e "
                  "(<= 1e-12)",
                  worst_ks, crit, worst_perm)};
}

std::pair<bool, std::string> criterion_hygiene() {
  // Finite-difference checks of every derivative slot the solvers consume,
  // on the mean-field-coupled variant so the measure derivatives are live.
  testutil::ScalarLq p = testutil::reference_params();
  p.S = -0.5;
  p.ST = -0.5;
  const TimeGrid grid = make_time_grid(1.0, 10);
  const CoefficientSet cs = lq_coefficients(testutil::build_lq(p), grid);
  const double h = 1e-6, t = 0.3;
  std::mt19937 gen(11);
  std::normal_distribution<double> N01;
  auto rel = [](double an, double fd) {
    return std::abs(an - fd) / (1.0 + std::max(std::abs(an), std::abs(fd)));
  };

  double worst_fd = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = testutil::vec1(N01(gen)), a = testutil::vec1(N01(gen)),
               y = testutil::vec1(N01(gen));
    const Eigen::MatrixXd z = Eigen::MatrixXd::Constant(1, 1, N01(gen));
    EmpiricalMeasure mu, nu;
    mu.points = Eigen::MatrixXd::NullaryExpr(3, 1, [&](Eigen::Index, Eigen::Index) {
      return N01(gen);
    });
    nu.points = Eigen::MatrixXd::NullaryExpr(3, 1, [&](Eigen::Index, Eigen::Index) {
      return N01(gen);
    });
    auto bump = [&](const Eigen::VectorXd& v, double eps) {
      Eigen::VectorXd out = v;
      out(0) += eps;
      return out;
    };

    worst_fd = std::max(
        {worst_fd,
         rel(cs.dx_f(t, x, a, mu, nu)(0),
             (cs.f(t, bump(x, h), a, mu, nu) - cs.f(t, bump(x, -h), a, mu, nu)) / (2 * h)),
         rel(cs.da_f(t, x, a, mu, nu)(0),
             (cs.f(t, x, bump(a, h), mu, nu) - cs.f(t, x, bump(a, -h), mu, nu)) / (2 * h)),
         rel(cs.dx_g(x, mu)(0), (cs.g(bump(x, h), mu) - cs.g(bump(x, -h), mu)) / (2 * h)),
         rel(cs.dx_b_adj(t, x, a, mu, nu, y)(0),
             ((cs.b(t, bump(x, h), a, mu, nu) - cs.b(t, bump(x, -h), a, mu, nu)) / (2 * h))
                 .dot(y)),
         rel(cs.da_b_adj(t, x, a, mu, nu, y)(0),
             ((cs.b(t, x, bump(a, h), mu, nu) - cs.b(t, x, bump(a, -h), mu, nu)) / (2 * h))
                 .dot(y)),
         rel(cs.dx_sigma_adj(t, x, a, mu, nu, z)(0),
             ((cs.sigma(t, bump(x, h), a, mu, nu) - cs.sigma(t, bump(x, -h), a, mu, nu)) /
              (2 * h))
                 .cwiseProduct(z)
                 .sum()),
         rel(cs.da_sigma0_adj(t, x, a, mu, nu, z)(0),
             ((cs.sigma0(t, x, bump(a, h), mu, nu) - cs.sigma0(t, x, bump(a, -h), mu, nu)) /
              (2 * h))
                 .cwiseProduct(z)
                 .sum())});

    // Hamiltonian: its analytic control gradient (through foc_residual with
    // zeta = 0) against a central difference, and stationarity of minimize_H.
    Theta th;
    th.x = x;
    th.y = y;
    th.z = z;
    th.z0 = Eigen::MatrixXd::Constant(1, 1, N01(gen));
    EmpiricalMeasure xi;
    xi.points.resize(3, 2);
    xi.points << mu.points, nu.points;
    const double dH_fd =
        (eval_H(cs, t, th, bump(a, h), xi) - eval_H(cs, t, th, bump(a, -h), xi)) / (2 * h);
    worst_fd = std::max(
        worst_fd, rel(foc_residual(cs, t, th, mu, testutil::vec1(0.0), a), std::abs(dH_fd)));
    const Eigen::VectorXd astar = minimize_H(cs, t, th, mu, testutil::vec1(0.0));
    const double dH_star = (eval_H(cs, t, th, bump(astar, h), xi) -
                            eval_H(cs, t, th, bump(astar, -h), xi)) /
                           (2 * h);
    worst_fd = std::max(worst_fd, std::abs(dH_star));
  }

  // Martingale defect of the production-scale adjoint.
  const ReferenceRuns& r = reference_runs();
  if (!r.ready) return {false, "reference pipeline failed: " + r.error};
  const double mart = martingale_residual(r.aux);
  const double mart_bound = 5.0 / std::sqrt(double(r.cfg.m_aux));

  // Byte-identical rerun under a fixed seed.
  const auto model = make_reduced_model(
      lq_coefficients(testutil::build_lq(testutil::reference_params()), grid));
  MkvConfig cfg;
  cfg.worlds = 8;
  cfg.particles = 256;
  const MfeSolution one = solve_mfe(model, testutil::point1(1.0), 2024, cfg);
  const MfeSolution two = solve_mfe(model, testutil::point1(1.0), 2024, cfg);
  bool identical = one.converged && two.converged && one.iterations == two.iterations;
  for (std::size_t k = 0; identical && k <= grid.steps; ++k)
    identical = one.X[k] == two.X[k] && one.betaY[k] == two.betaY[k] &&
                one.betaZ[k] == two.betaZ[k] && one.betaZ0[k] == two.betaZ0[k];

  return {worst_fd <= 1e-6 && mart <= mart_bound && identical,
          fmt("worst FD mismatch %.1e (<= 1e-6), martingale residual %.3f (<= %.3f)", worst_fd,
              mart, mart_bound) +
              (identical ? ", reruns byte-identical" : ", reruns DIFFER")};
}

}  // namespace

int main() {
  criterion(1, criterion_rate);
  criterion(2, criterion_riccati);
  criterion(3, criterion_uniqueness);
  criterion(4, criterion_monotonicity);
  criterion(5, criterion_foc);
  criterion(6, criterion_coupling);
  criterion(7, criterion_hygiene);
  return failures;
}
