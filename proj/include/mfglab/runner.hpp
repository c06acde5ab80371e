#pragma once

#include <cstdint>
#include <string>

namespace mfg {

inline constexpr const char* kVersion = "1.0.0";

struct RunOptions {
  std::string config_path;
  std::string out_dir;  // empty: use the config's output.directory
  bool seed_override = false;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = auto
};

// Execute one subcommand (check-monotonicity, solve-mfg, solve-nplayer,
// convergence, oracle-riccati), writing CSV artifacts and a run manifest
// into the output directory. Returns 0 on success, 1 on configuration
// failure, 2 on solver failure; a failure message is stored in *error.
int run_subcommand(const std::string& name, const RunOptions& opts, std::string* error);

}  // namespace mfg
