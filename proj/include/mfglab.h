#ifndef MFGLAB_H
#define MFGLAB_H

/* C interface to the mean-field game laboratory. All functions are
 * thread-compatible: distinct handles may be used from distinct threads,
 * a single handle must not be shared without external synchronization. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define MFG_OK 0
#define MFG_ERR_CONFIG 1
#define MFG_ERR_SOLVER 2

typedef struct mfg_handle mfg_handle;

/* Create / destroy an experiment handle. */
mfg_handle* mfg_create(void);
void mfg_destroy(mfg_handle* h);

/* Point the handle at a config file. The file is parsed lazily at run time
 * so that parse failures surface through mfg_run's exit code. */
int mfg_set_config(mfg_handle* h, const char* path);

/* Optional overrides. */
int mfg_set_seed(mfg_handle* h, uint64_t seed);
int mfg_set_threads(mfg_handle* h, int threads);
int mfg_set_output_dir(mfg_handle* h, const char* dir);

/* Run one subcommand: "check-monotonicity", "solve-mfg", "solve-nplayer",
 * "convergence" or "oracle-riccati". Returns MFG_OK, MFG_ERR_CONFIG or
 * MFG_ERR_SOLVER. */
int mfg_run(mfg_handle* h, const char* subcommand);

/* Message of the last failure on this handle; empty string if none.
 * Owned by the handle, valid until the next call on it. */
const char* mfg_last_error(const mfg_handle* h);

/* Library version string. */
const char* mfg_version(void);

#ifdef __cplusplus
}
#endif

#endif /* MFGLAB_H */
