#ifndef WALKMETA_H
#define WALKMETA_H

/* Generated by cbindgen from walkmeta-ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function in this interface.
 */
typedef enum WmStatus {
  WM_STATUS_OK = 0,
  WM_STATUS_NULL_POINTER = 1,
  WM_STATUS_INVALID_UTF8 = 2,
  WM_STATUS_INVALID_PARAMETER = 3,
  WM_STATUS_CONFIG = 4,
  WM_STATUS_NUMERICAL = 5,
  WM_STATUS_IO = 6,
  WM_STATUS_OUT_OF_RANGE = 7,
  WM_STATUS_PANIC = 8,
} WmStatus;

/**
 * Parsed and validated experiment configuration.
 */
typedef struct WmConfig WmConfig;

/**
 * Outcome of one simulated run.
 */
typedef struct WmRecord WmRecord;

/**
 * Communication graph with its transition matrix.
 */
typedef struct WmTopology WmTopology;

/**
 * One evaluation row of a run.
 */
typedef struct WmRow {
  uint64_t iteration;
  uint64_t comm_units;
  /**
   * Active client at evaluation time, or -1 when none.
   */
  int64_t active_client;
  double train_metric;
  double unseen_metric;
  /**
   * NaN when the run skipped gradient-norm evaluation.
   */
  double grad_norm_sq;
} WmRow;

/**
 * Network-level privacy guarantee of a perturbed run.
 */
typedef struct WmDpReport {
  double epsilon_prime;
  double delta_total;
  double n_u;
  double q;
} WmDpReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *wm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *wm_version(void);

/**
 * Parses TOML configuration text. `*out` receives a new handle on success.
 *
 * # Safety
 * `text` must be NULL or a NUL-terminated string; `out` must be NULL or writable.
 */
enum WmStatus wm_config_parse(const char *text, struct WmConfig **out);

/**
 * Loads configuration from a file path.
 *
 * # Safety
 * As for [`wm_config_parse`].
 */
enum WmStatus wm_config_load(const char *path, struct WmConfig **out);

/**
 * Overrides the run seed.
 *
 * # Safety
 * `cfg` must be NULL or a live handle from this library.
 */
enum WmStatus wm_config_set_seed(struct WmConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be NULL or a handle not yet freed.
 */
void wm_config_free(struct WmConfig *cfg);

/**
 * Runs the configured experiment. A run that aborts on a numerical failure
 * still yields a record; check [`wm_record_aborted`].
 *
 * # Safety
 * `cfg` must be NULL or a live handle; `out` must be NULL or writable.
 */
enum WmStatus wm_run(const struct WmConfig *cfg, struct WmRecord **out);

/**
 * # Safety
 * `rec` must be NULL or a live handle; `out` must be NULL or writable.
 */
enum WmStatus wm_record_row_count(const struct WmRecord *rec, size_t *out);

/**
 * Copies evaluation row `index` into `*out`.
 *
 * # Safety
 * `rec` must be NULL or a live handle; `out` must be NULL or writable.
 */
enum WmStatus wm_record_row(const struct WmRecord *rec, size_t index, struct WmRow *out);

/**
 * Total communication units spent by the run.
 *
 * # Safety
 * `rec` must be NULL or a live handle; `out` must be NULL or writable.
 */
enum WmStatus wm_record_comm_units(const struct WmRecord *rec, uint64_t *out);

/**
 * Writes 1 to `*out` if the run stopped early on a numerical failure, else 0.
 *
 * # Safety
 * `rec` must be NULL or a live handle; `out` must be NULL or writable.
 */
enum WmStatus wm_record_aborted(const struct WmRecord *rec, int32_t *out);

/**
 * Copies the final meta-parameters into `buf`. `*len` holds the buffer
 * capacity on entry and the parameter count on return; if the buffer is too
 * small nothing is copied and `WM_STATUS_OUT_OF_RANGE` is returned.
 *
 * # Safety
 * `buf` must be NULL or point to `*len` writable doubles.
 */
enum WmStatus wm_record_final_params(const struct WmRecord *rec, double *buf, size_t *len);

/**
 * Writes the run CSV to `path`.
 *
 * # Safety
 * `rec` must be NULL or a live handle; `path` must be NULL or NUL-terminated.
 */
enum WmStatus wm_record_write_csv(const struct WmRecord *rec, const char *path);

/**
 * Network-DP report of a perturbed run. Returns `WM_STATUS_INVALID_PARAMETER`
 * when the run added no noise.
 *
 * # Safety
 * `rec` must be NULL or a live handle; `out` must be NULL or writable.
 */
enum WmStatus wm_record_dp(const struct WmRecord *rec, struct WmDpReport *out);

/**
 * # Safety
 * `rec` must be NULL or a handle not yet freed.
 */
void wm_record_free(struct WmRecord *rec);

/**
 * Builds the configured communication graph and transition matrix.
 *
 * # Safety
 * `cfg` must be NULL or a live handle; `out` must be NULL or writable.
 */
enum WmStatus wm_topology_from_config(const struct WmConfig *cfg, struct WmTopology **out);

/**
 * # Safety
 * `topo` must be NULL or a live handle; pointers must be NULL or writable.
 */
enum WmStatus wm_topology_size(const struct WmTopology *topo, size_t *nodes, size_t *edges);

/**
 * Second-largest eigenvalue magnitude of the transition matrix.
 *
 * # Safety
 * `topo` must be NULL or a live handle; `out` must be NULL or writable.
 */
enum WmStatus wm_topology_sigma2(const struct WmTopology *topo, double *out);

/**
 * Stationary distribution, with the same buffer protocol as
 * [`wm_record_final_params`].
 *
 * # Safety
 * `buf` must be NULL or point to `*len` writable doubles.
 */
enum WmStatus wm_topology_stationary(const struct WmTopology *topo, double *buf, size_t *len);

/**
 * # Safety
 * `topo` must be NULL or a handle not yet freed.
 */
void wm_topology_free(struct WmTopology *topo);

/**
 * Per-coordinate variance of the Gaussian perturbation.
 *
 * # Safety
 * `out` must be NULL or writable.
 */
enum WmStatus wm_noise_variance(double epsilon, double delta, double m_meta, double *out);

/**
 * Network-level guarantee after `iterations` steps over `clients` clients.
 *
 * # Safety
 * `out` must be NULL or writable.
 */
enum WmStatus wm_account_network_dp(double epsilon,
                                    double delta,
                                    double delta_hat,
                                    uint64_t iterations,
                                    size_t clients,
                                    struct WmDpReport *out);

/**
 * Communication units per iteration for a method named as in configs
 * (`lodmeta`, `lodmeta_basic`, `lodmeta_sgd`, `centralized_maml`).
 * `n_active` is used only by `centralized_maml`.
 *
 * # Safety
 * `method` must be NULL or NUL-terminated; `out` must be NULL or writable.
 */
enum WmStatus wm_comm_cost(const char *method, size_t n_active, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WALKMETA_H */
