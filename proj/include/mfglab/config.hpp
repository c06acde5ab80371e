#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfglab/mkv_solver.hpp"
#include "mfglab/model.hpp"
#include "mfglab/noise.hpp"
#include "mfglab/nplayer_solver.hpp"
#include "mfglab/time_grid.hpp"

namespace mfg {

// Parsed experiment configuration. The file format is INI-style sections of
// key = value lines; '#' and ';' start comments. Every key has a default
// except the [model] section, which must be present. The configurable model
// is the scalar LQ game; matrix-valued models go through the library API.
struct RunConfig {
  // [model]
  double A = 0.0, B = 0.0, C = 0.0, C0 = 0.0, D = 0.0, D0 = 0.0;
  double Q = 1.0, Qbar = 0.0, S = 0.0, P = 1.0, Pbar = 0.0;
  double QT = 1.0, QbarT = 0.0, ST = 0.0;
  double c1 = 0.0, c2 = 0.0;
  double x0 = 1.0, x0_std = 0.0;

  // [grid]
  double T = 1.0;
  std::size_t K = 100;

  // [montecarlo]
  std::size_t worlds = 64;
  Eigen::Index particles = 1024;
  std::size_t repetitions = 256;
  Eigen::Index m_aux = 4096;

  // [solver]
  double damping = 0.5;
  double picard_tol = 1e-6;
  std::size_t max_picard = 200;
  bool continuation = false;
  double continuation_step = 0.25;
  double continuation_min_step = 1e-4;
  std::string basis = "affine";

  // [experiment]
  std::vector<Eigen::Index> N_list = {4, 8, 16, 32};
  std::uint64_t seed = 12345;
  std::size_t trials = 10000;
  Eigen::Index cloud_atoms = 64;

  // [output]
  std::string directory = "out";

  // raw file bytes, for the replay hash in artifact headers
  std::string raw_text;

  TimeGrid grid() const;
  LQCoefficients lq() const;
  InitialLaw initial_law() const;
  MkvConfig mkv(std::size_t worlds_override = 0, Eigen::Index particles_override = 0) const;
  NeConfig ne(Eigen::Index players) const;
};

// Parse and validate. Throws ConfigError listing every violation, not just
// the first.
RunConfig parse_config(const std::string& path);

// FNV-1a hash of the raw config text, quoted in artifact headers.
std::uint64_t config_hash(const std::string& raw_text);

}  // namespace mfg
