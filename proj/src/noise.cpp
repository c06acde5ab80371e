#include "mfglab/noise.hpp"

#include <cmath>

#include "mfglab/errors.hpp"

namespace mfg {

InitialLaw InitialLaw::gaussian(Eigen::VectorXd mean, const Eigen::MatrixXd& cov) {
  InitialLaw law;
  law.kind = Kind::Gaussian;
  law.mean = std::move(mean);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw ConfigError("initial law: covariance is not positive definite");
  law.cov_chol = llt.matrixL();
  return law;
}

NoiseBundle sample_noise(const TimeGrid& grid, Eigen::Index paths, Eigen::Index d,
                         const InitialLaw& mu0, std::uint64_t seed, std::uint64_t world) {
  if (paths < 1) throw ConfigError("sample_noise: need at least one path");
  if (d < 1) throw ConfigError("sample_noise: noise dimension must be >= 1");

  NoiseBundle b;
  b.grid = grid;
  b.d = d;
  b.seed = seed;
  b.world = world;

  const double sqrt_dt = std::sqrt(grid.dt());
  const auto K = static_cast<Eigen::Index>(grid.steps);

  const std::uint64_t key_common = rng::stream_key(seed, rng::Role::Common, world);
  b.common.resize(K, d);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < d; ++j)
      b.common(k, j) = sqrt_dt * rng::standard_normal(key_common, 0, static_cast<std::uint64_t>(k),
                                                      static_cast<std::uint32_t>(j));

  const std::uint64_t key_idio = rng::stream_key(seed, rng::Role::Idiosyncratic, world);
  b.idiosyncratic.resize(paths, K * d);
  for (Eigen::Index p = 0; p < paths; ++p)
    for (Eigen::Index k = 0; k < K; ++k)
      for (Eigen::Index j = 0; j < d; ++j)
        b.idiosyncratic(p, k * d + j) =
            sqrt_dt * rng::standard_normal(key_idio, static_cast<std::uint64_t>(p),
                                           static_cast<std::uint64_t>(k),
                                           static_cast<std::uint32_t>(j));

  const Eigen::Index n = mu0.dim();
  b.initial_states.resize(paths, n);
  if (mu0.kind == InitialLaw::Kind::PointMass) {
    b.initial_states.rowwise() = mu0.mean.transpose();
  } else {
    const std::uint64_t key_init = rng::stream_key(seed, rng::Role::Initial, world);
    Eigen::VectorXd g(n);
    for (Eigen::Index p = 0; p < paths; ++p) {
      for (Eigen::Index i = 0; i < n; ++i)
        g(i) = rng::standard_normal(key_init, static_cast<std::uint64_t>(p), 0,
                                    static_cast<std::uint32_t>(i));
      b.initial_states.row(p) = (mu0.mean + mu0.cov_chol * g).transpose();
    }
  }
  return b;
}

NoiseBundle restrict_players(const NoiseBundle& bundle, Eigen::Index n_players) {
  if (n_players > bundle.paths())
    throw IndexError("restrict_players: N exceeds available paths");
  if (n_players < 1) throw IndexError("restrict_players: N must be >= 1");
  NoiseBundle out = bundle;
  out.idiosyncratic = bundle.idiosyncratic.topRows(n_players);
  out.initial_states = bundle.initial_states.topRows(n_players);
  return out;
}

}  // namespace mfg
