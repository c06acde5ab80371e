#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "mfglab.h"

int main(int argc, char** argv) {
  CLI::App app{"mean-field game laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool have_seed = false;
  int threads = 0;

  const char* names[] = {"check-monotonicity", "solve-mfg", "solve-nplayer", "convergence",
                         "oracle-riccati"};
  const char* descriptions[] = {
      "certify the drift and terminal monotonicity conditions",
      "solve the mean-field equilibrium and dump the measure flow",
      "solve the N-player adjoint system for each configured N",
      "couple both systems and fit the equilibrium convergence rate",
      "Riccati reference solution for the deterministic sub-case"};
  for (int i = 0; i < 5; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descriptions[i]);
    sub->add_option("--config", config_path, "config file path")->required();
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
    sub->add_option("--seed", seed, "RNG seed (overrides the config)")
        ->each([&](const std::string&) { have_seed = true; });
    sub->add_option("--threads", threads, "worker threads, 0 = auto");
  }

  CLI11_PARSE(app, argc, argv);

  std::unique_ptr<mfg_handle, void (*)(mfg_handle*)> handle(mfg_create(), mfg_destroy);
  if (!handle) {
    std::fprintf(stderr, "error: out of memory\n");
    return MFG_ERR_SOLVER;
  }
  mfg_set_config(handle.get(), config_path.c_str());
  if (!out_dir.empty()) mfg_set_output_dir(handle.get(), out_dir.c_str());
  if (have_seed) mfg_set_seed(handle.get(), seed);
  if (threads > 0) mfg_set_threads(handle.get(), threads);

  const int rc = mfg_run(handle.get(), app.get_subcommands().front()->get_name().c_str());
  if (rc != MFG_OK) std::fprintf(stderr, "error: %s\n", mfg_last_error(handle.get()));
  return rc;
}
