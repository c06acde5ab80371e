#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"
#include "mfglab/errors.hpp"
#include "mfglab/harness.hpp"
#include "mfglab/model.hpp"
#include "mfglab/nplayer_solver.hpp"
#include "mfglab/reduced_model.hpp"
#include "test_models.hpp"

using namespace mfg;

TEST_CASE("power-law fits recover exact synthetic rates") {
  std::vector<std::pair<double, double>> inv, half, flat;
  for (double N : {4.0, 8.0, 16.0, 32.0}) {
    inv.emplace_back(N, 3.0 / N);
    half.emplace_back(N, 2.0 / std::sqrt(N));
    flat.emplace_back(N, 0.7);
  }

  const RateFit f1 = fit_power_law(inv);
  CHECK(f1.slope == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(f1.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(f1.r2 == doctest::Approx(1.0).epsilon(1e-12));

  const RateFit f2 = fit_power_law(half);
  CHECK(f2.slope == doctest::Approx(-0.5).epsilon(1e-12));

  const RateFit f3 = fit_power_law(flat);
  CHECK(f3.slope == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f3.r2 == doctest::Approx(1.0).epsilon(1e-12));  // no variance to explain

  CHECK_THROWS_AS(fit_power_law({{4.0, 1.0}, {8.0, 0.5}}), ConfigError);
  CHECK_THROWS_AS(fit_power_law({{4.0, 1.0}, {8.0, 0.0}, {16.0, 0.1}}), ConfigError);

  std::vector<GapReport> reports(3);
  for (int i = 0; i < 3; ++i) {
    reports[i].N = 4 << i;
    reports[i].state_gap = 1.0 / double(reports[i].N);
    reports[i].control_gap = 4.0 / double(reports[i].N * reports[i].N);
  }
  CHECK(rate_fit(reports, GapKind::State).slope == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(rate_fit(reports, GapKind::Control).slope == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("Riccati oracle closed forms") {
  const TimeGrid grid = make_time_grid(1.0, 50);

  // No dynamics: the recursion is pure cost accumulation, K_k = QT + Q(T - t_k).
  testutil::ScalarLq p;
  p.Q = 2.0;
  p.QT = 3.0;
  const RiccatiSolution acc = riccati_oracle(testutil::build_lq(p), grid);
  for (std::size_t k = 0; k <= 50; ++k)
    CHECK(acc.K[k](0, 0) == doctest::Approx(3.0 + 2.0 * (1.0 - grid.t(k))).epsilon(1e-12));
  CHECK(acc.value(testutil::vec1(2.0)) == doctest::Approx(0.5 * 4.0 * 5.0).epsilon(1e-12));

  // No running cost and no dynamics: K frozen at the terminal weight.
  testutil::ScalarLq q;
  q.Q = 0.0;
  q.QT = 3.0;
  const RiccatiSolution frozen = riccati_oracle(testutil::build_lq(q), grid);
  for (std::size_t k = 0; k <= 50; ++k)
    CHECK(frozen.K[k](0, 0) == doctest::Approx(3.0).epsilon(1e-12));

  // Controlled scalar case against the continuous Riccati flow
  // K' = K^2 B^2/P - Q (A = 0), whose solution through K(T) = 1/2 is
  // K(t) = tanh(T - t + artanh(1/2)). First-order scheme: O(dt) accuracy.
  testutil::ScalarLq r;
  r.B = 1.0;
  r.Q = 1.0;
  r.P = 1.0;
  r.QT = 0.5;
  r.c1 = 1.0;
  const TimeGrid fine = make_time_grid(1.0, 400);
  const RiccatiSolution ric = riccati_oracle(testutil::build_lq(r), fine);
  const double expected = std::tanh(1.0 + std::atanh(0.5));
  CHECK(ric.K[0](0, 0) == doctest::Approx(expected).epsilon(5e-3));
  // Costate feedback gain: alpha_k = -(c1 B / P) K_k x_k.
  CHECK(ric.gain[0](0, 0) == doctest::Approx(ric.K[0](0, 0)).epsilon(1e-12));

  // The oracle covers only the deterministic decoupled sub-case.
  CHECK_THROWS_AS(riccati_oracle(testutil::build_lq(testutil::reference_params()), grid),
                  UnsupportedError);
}

TEST_CASE("Kolmogorov-Smirnov statistic") {
  CHECK(ks_statistic({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == doctest::Approx(0.0));
  CHECK(ks_statistic({0.0, 1.0}, {5.0, 6.0}) == doctest::Approx(1.0));
  CHECK(ks_statistic({1.0, 2.0}, {1.5, 2.5}) == doctest::Approx(0.5));
  CHECK(ks_critical_1pct(100, 100) ==
        doctest::Approx(1.628 * std::sqrt(200.0 / 10000.0)).epsilon(1e-12));
}

TEST_CASE("coupled copies slice the auxiliary cloud") {
  const TimeGrid grid = make_time_grid(1.0, 10);
  const CoefficientSet cs =
      lq_coefficients(testutil::build_lq(testutil::reference_params()), grid);

  MkvConfig cfg;
  cfg.worlds = 4;  // repetitions
  cfg.particles = 64;
  const CoupledCopies copies = build_coupled_copies(cs, testutil::point1(1.0), 11, cfg, 3);

  REQUIRE(copies.players == 3);
  REQUIRE(copies.mfe.converged);
  // Row r*N+i of the copies is particle i of world r.
  for (std::size_t k = 0; k <= 10; ++k) {
    for (std::size_t r = 0; r < 4; ++r)
      CHECK(copies.X[k].middleRows(3 * Eigen::Index(r), 3) ==
            copies.mfe.X[k].middleRows(64 * Eigen::Index(r), 3));
  }
  for (std::size_t r = 0; r < 4; ++r)
    CHECK(copies.alpha[5].middleRows(3 * Eigen::Index(r), 3) ==
          copies.mfe.alpha_at(r, 5).topRows(3));

  MfeSolution tiny = copies.mfe;
  CHECK_THROWS_AS(build_coupled_copies(std::move(tiny), 128), ConfigError);
}

TEST_CASE("gap metrics vanish on identical coupled systems") {
  const TimeGrid grid = make_time_grid(1.0, 10);
  const CoefficientSet cs =
      lq_coefficients(testutil::build_lq(testutil::reference_params()), grid);

  MkvConfig cfg;
  cfg.worlds = 4;
  cfg.particles = 32;
  const CoupledCopies copies = build_coupled_copies(cs, testutil::point1(1.0), 13, cfg, 4);

  NeSolution ne;
  ne.converged = true;
  ne.grid = grid;
  ne.n = ne.l = ne.d = 1;
  ne.players = 4;
  ne.repetitions = 4;
  ne.seed = 13;
  ne.X = copies.X;
  ne.alpha = copies.alpha;

  const GapReport rep = gap_metrics(cs, copies, ne);
  CHECK(rep.N == 4);
  CHECK(rep.state_gap == 0.0);
  CHECK(rep.control_gap == 0.0);
  // Identical clouds: only the 1/N atom corrections survive, and they vanish
  // for S = ST = 0.
  CHECK(rep.EF == 0.0);
  CHECK(rep.EG == 0.0);
  CHECK(rep.EB >= 0.0);
  CHECK(rep.ESigma >= 0.0);
  CHECK(rep.ESigma0 >= 0.0);

  NeSolution bad = ne;
  bad.seed = 14;
  CHECK_THROWS_AS(gap_metrics(cs, copies, bad), ConfigError);
  NeSolution few = ne;
  few.players = 3;
  CHECK_THROWS_AS(gap_metrics(cs, copies, few), ConfigError);
  NeSolution other = ne;
  other.repetitions = 2;
  CHECK_THROWS_AS(gap_metrics(cs, copies, other), ConfigError);
}

TEST_CASE("decoupled game: mean-field copies track the N-player system") {
  // With no mean-field terms in cost or dynamics the two systems solve the
  // same independent control problems on shared noise, so the gaps reduce to
  // the difference between the two regression schemes.
  const TimeGrid grid = make_time_grid(1.0, 100);
  testutil::ScalarLq p = testutil::reference_params();
  p.Qbar = 0.0;
  p.QbarT = 0.0;
  p.Pbar = 0.0;
  p.S = p.ST = 0.0;
  p.c2 = 0.0;
  const CoefficientSet cs = lq_coefficients(testutil::build_lq(p), grid, false);

  MkvConfig mkv;
  mkv.worlds = 256;
  mkv.particles = 64;
  const CoupledCopies copies = build_coupled_copies(cs, testutil::point1(1.0), 42, mkv, 4);
  REQUIRE(copies.mfe.converged);

  NeConfig necfg;
  necfg.players = 4;
  necfg.repetitions = 256;
  const NeSolution ne = ne_picard_solve(cs, testutil::point1(1.0), 42, necfg);
  REQUIRE(ne.converged);

  const GapReport rep = gap_metrics(cs, copies, ne);
  CHECK(rep.state_gap <= 1e-4);
  CHECK(rep.control_gap <= 1e-4);
}
