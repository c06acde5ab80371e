#include "mfglab.h"

#include <new>
#include <string>

#include "mfglab/runner.hpp"

struct mfg_handle {
  mfg::RunOptions opts;
  std::string last_error;
};

extern "C" {

mfg_handle* mfg_create(void) { return new (std::nothrow) mfg_handle(); }

void mfg_destroy(mfg_handle* h) { delete h; }

int mfg_set_config(mfg_handle* h, const char* path) {
  if (!h || !path) return MFG_ERR_CONFIG;
  h->opts.config_path = path;
  return MFG_OK;
}

int mfg_set_seed(mfg_handle* h, uint64_t seed) {
  if (!h) return MFG_ERR_CONFIG;
  h->opts.seed = seed;
  h->opts.seed_override = true;
  return MFG_OK;
}

int mfg_set_threads(mfg_handle* h, int threads) {
  if (!h || threads < 0) return MFG_ERR_CONFIG;
  h->opts.threads = threads;
  return MFG_OK;
}

int mfg_set_output_dir(mfg_handle* h, const char* dir) {
  if (!h || !dir) return MFG_ERR_CONFIG;
  h->opts.out_dir = dir;
  return MFG_OK;
}

int mfg_run(mfg_handle* h, const char* subcommand) {
  if (!h) return MFG_ERR_CONFIG;
  if (!subcommand) {
    h->last_error = "null subcommand";
    return MFG_ERR_CONFIG;
  }
  if (h->opts.config_path.empty()) {
    h->last_error = "no config file set";
    return MFG_ERR_CONFIG;
  }
  return mfg::run_subcommand(subcommand, h->opts, &h->last_error);
}

const char* mfg_last_error(const mfg_handle* h) {
  return h ? h->last_error.c_str() : "null handle";
}

const char* mfg_version(void) { return mfg::kVersion; }

}  // extern "C"
