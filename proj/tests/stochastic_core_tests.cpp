#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mfglab/errors.hpp"
#include "mfglab/noise.hpp"
#include "mfglab/rng.hpp"
#include "mfglab/time_grid.hpp"
#include "test_models.hpp"

using namespace mfg;

TEST_CASE("time grid basics") {
  const TimeGrid g = make_time_grid(1.0, 100);
  CHECK(g.dt() == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(g.nodes() == 101);
  CHECK(g.t(0) == 0.0);
  CHECK(g.t(100) == doctest::Approx(1.0).epsilon(1e-15));

  CHECK_THROWS_AS(make_time_grid(0.0, 10), ConfigError);
  CHECK_THROWS_AS(make_time_grid(-1.0, 10), ConfigError);
  CHECK_THROWS_AS(make_time_grid(1.0, 0), ConfigError);
}

TEST_CASE("counter-based draws are pure functions of their coordinates") {
  const std::uint64_t key = rng::stream_key(42, rng::Role::Idiosyncratic, 3);
  CHECK(rng::standard_normal(key, 7, 11, 0) == rng::standard_normal(key, 7, 11, 0));
  CHECK(rng::uniform_unit(key, 7, 11, 0) == rng::uniform_unit(key, 7, 11, 0));

  // Distinct coordinates, roles and worlds give distinct draws.
  CHECK(rng::standard_normal(key, 7, 11, 0) != rng::standard_normal(key, 8, 11, 0));
  CHECK(rng::standard_normal(key, 7, 11, 0) != rng::standard_normal(key, 7, 12, 0));
  CHECK(rng::standard_normal(key, 7, 11, 0) != rng::standard_normal(key, 7, 11, 1));
  const std::uint64_t key2 = rng::stream_key(42, rng::Role::Common, 3);
  const std::uint64_t key3 = rng::stream_key(42, rng::Role::Idiosyncratic, 4);
  CHECK(key != key2);
  CHECK(key != key3);
  // The uniform sub-stream does not alias the normal one at shared coordinates.
  CHECK(rng::uniform_unit(key, 7, 11, 0) != rng::standard_normal(key, 7, 11, 0));
}

TEST_CASE("normal stream moments") {
  const std::uint64_t key = rng::stream_key(2024, rng::Role::Idiosyncratic, 0);
  const int m = 20000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < m; ++i) {
    const double x = rng::standard_normal(key, static_cast<std::uint64_t>(i), 0, 0);
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / m;
  const double var = sumsq / m - mean * mean;
  // 4-sigma Monte Carlo bands.
  CHECK(std::abs(mean) < 4.0 / std::sqrt(double(m)));
  CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / double(m)));
}

TEST_CASE("uniform stream stays strictly inside (0,1)") {
  const std::uint64_t key = rng::stream_key(5, rng::Role::Cloud, 0);
  double sum = 0.0;
  const int m = 5000;
  for (int i = 0; i < m; ++i) {
    const double u = rng::uniform_unit(key, static_cast<std::uint64_t>(i), 0, 0);
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / m - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / m));
}

TEST_CASE("noise bundle: shape, scaling and stability under path extension") {
  const TimeGrid g = make_time_grid(2.0, 50);
  const auto mu0 = testutil::point1(1.0);

  const NoiseBundle small = sample_noise(g, 4, 1, mu0, 99, 7);
  const NoiseBundle big = sample_noise(g, 16, 1, mu0, 99, 7);

  CHECK(small.common.rows() == 50);
  CHECK(small.idiosyncratic.rows() == 4);
  CHECK(small.idiosyncratic.cols() == 50);

  // The common path does not depend on the number of idiosyncratic paths, and
  // adding paths never perturbs the existing ones.
  CHECK(small.common == big.common);
  CHECK(small.idiosyncratic == big.idiosyncratic.topRows(4));
  CHECK(small.initial_states == big.initial_states.topRows(4));

  // Different worlds give different common paths.
  const NoiseBundle other = sample_noise(g, 4, 1, mu0, 99, 8);
  CHECK(small.common != other.common);

  // Increment variance is dt up to Monte Carlo error.
  const double dt = g.dt();
  const double var = big.idiosyncratic.array().square().mean();
  CHECK(std::abs(var - dt) < 4.0 * dt * std::sqrt(2.0 / double(big.idiosyncratic.size())));
}

TEST_CASE("noise bundle: initial states") {
  const TimeGrid g = make_time_grid(1.0, 10);

  const NoiseBundle pm = sample_noise(g, 8, 1, testutil::point1(2.5), 1, 0);
  CHECK((pm.initial_states.array() == 2.5).all());

  const auto gauss = InitialLaw::gaussian(testutil::vec1(1.0),
                                          Eigen::MatrixXd::Constant(1, 1, 0.25));
  const NoiseBundle gb = sample_noise(g, 4000, 1, gauss, 1, 0);
  const double mean = gb.initial_states.mean();
  const double sd = std::sqrt((gb.initial_states.array() - mean).square().mean());
  CHECK(std::abs(mean - 1.0) < 4.0 * 0.5 / std::sqrt(4000.0));
  CHECK(sd == doctest::Approx(0.5).epsilon(0.1));

  CHECK_THROWS_AS(InitialLaw::gaussian(testutil::vec1(0.0),
                                       Eigen::MatrixXd::Constant(1, 1, -1.0)),
                  ConfigError);
}

TEST_CASE("noise bundle: argument validation and player restriction") {
  const TimeGrid g = make_time_grid(1.0, 10);
  const auto mu0 = testutil::point1(0.0);
  CHECK_THROWS_AS(sample_noise(g, 0, 1, mu0, 1, 0), ConfigError);
  CHECK_THROWS_AS(sample_noise(g, 1, 0, mu0, 1, 0), ConfigError);

  const NoiseBundle b = sample_noise(g, 8, 1, mu0, 1, 0);
  const NoiseBundle r = restrict_players(b, 3);
  CHECK(r.idiosyncratic.rows() == 3);
  CHECK(r.idiosyncratic == b.idiosyncratic.topRows(3));
  CHECK(r.common == b.common);
  CHECK_THROWS_AS(restrict_players(b, 9), IndexError);
  CHECK_THROWS_AS(restrict_players(b, 0), IndexError);
}
