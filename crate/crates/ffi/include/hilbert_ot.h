#ifndef HILBERT_OT_H
#define HILBERT_OT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every fallible entry point.
 */
typedef enum HotStatus {
  HOT_STATUS_OK = 0,
  HOT_STATUS_NULL_POINTER = 1,
  HOT_STATUS_INVALID_ARGUMENT = 2,
  HOT_STATUS_SHAPE_MISMATCH = 3,
  HOT_STATUS_CONFIG = 4,
  HOT_STATUS_IO = 5,
  HOT_STATUS_NON_FINITE = 6,
  HOT_STATUS_TRAINING = 7,
  HOT_STATUS_MISSING_ARTIFACT = 8,
  HOT_STATUS_BASIS_MISMATCH = 9,
  HOT_STATUS_PANIC = 10,
  HOT_STATUS_OTHER = 11,
} HotStatus;

/*
 Synthetic dataset pairs.
 */
typedef enum HotDataset {
  HOT_DATASET_PERPENDICULAR = 0,
  HOT_DATASET_PARALLEL = 1,
  HOT_DATASET_ONE_TO_MANY = 2,
  HOT_DATASET_GRID = 3,
} HotDataset;

/*
 Opaque trained or loaded transport map.
 */
typedef struct HotTransport HotTransport;

/*
 Held-out evaluation of a transport map.
 */
typedef struct HotMetrics {
  double d_cost;
  double d_target;
  double w2sq_mu_nu;
  double mean_transport_cost;
  size_t n;
} HotMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *hot_version(void);

/*
 Message for the most recent failure on this thread, or NULL if none.
 The pointer stays valid until the next failing call on the same thread.
 */
const char *hot_last_error_message(void);

/*
 Clears the thread's last error.
 */
void hot_clear_error(void);

/*
 Noise level at `epoch` of the linear annealing schedule; the schedule
 itself is validated first.

 # Safety
 `out` must be valid for one `double` write.
 */
enum HotStatus hot_sigma_at(double sigma_max,
                            double sigma_min,
                            size_t total_epochs,
                            double active_fraction,
                            size_t epoch,
                            double *out);

/*
 Draws `n` source and `n` target samples with `num_modes` Fourier
 coefficients each. Both buffers need `n * num_modes` doubles.

 # Safety
 `source_out` and `target_out` must be valid for `n * num_modes` writes.
 */
enum HotStatus hot_generate(enum HotDataset dataset,
                            size_t n,
                            size_t num_modes,
                            uint64_t seed,
                            double *source_out,
                            double *target_out);

/*
 Exact empirical squared 2-Wasserstein distance between two `n x dim`
 point clouds with uniform weights.

 # Safety
 `a` and `b` must each point to `n * dim` readable doubles; `out` must be
 valid for one write.
 */
enum HotStatus hot_empirical_w2sq(const double *a,
                                  const double *b,
                                  size_t n,
                                  size_t dim,
                                  double *out);

/*
 Minimum-cost perfect matching for an `n x n` cost matrix. Row `i` is
 matched to column `permutation_out[i]`; ties resolve to the
 lexicographically smallest permutation.

 # Safety
 `cost` must point to `n * n` readable doubles, `permutation_out` must be
 valid for `n` writes and `total_out` for one write.
 */
enum HotStatus hot_solve_assignment(const double *cost,
                                    size_t n,
                                    size_t *permutation_out,
                                    double *total_out);

/*
 Loads a transport checkpoint written by `hilbert-ot train`.

 # Safety
 `path` must be a NUL-terminated string; `out` must be valid for one
 pointer write. The handle must be released with [`hot_transport_free`].
 */
enum HotStatus hot_transport_load(const char *path, struct HotTransport **out);

/*
 Number of coefficients the map expects per row.

 # Safety
 `handle` must be NULL or a live handle.
 */
size_t hot_transport_num_modes(const struct HotTransport *handle);

/*
 Applies the map to `n` rows of `dim` coefficients; `out` receives `n * dim`
 doubles and may not alias `x`.

 # Safety
 `handle` must be a live handle; `x` must point to `n * dim` readable
 doubles and `out` to `n * dim` writable ones.
 */
enum HotStatus hot_transport_apply(const struct HotTransport *handle,
                                   const double *x,
                                   size_t n,
                                   size_t dim,
                                   double *out);

/*
 Releases a handle. NULL is ignored.

 # Safety
 `handle` must be NULL or a handle not yet freed.
 */
void hot_transport_free(struct HotTransport *handle);

/*
 Trains from a JSON experiment config (same schema as the CLI; `{}` gives
 the defaults). Nothing is written to disk. `metrics_out` may be NULL;
 otherwise it receives the held-out metrics (all NaN when `epochs = 0`).

 # Safety
 `config_json` must be a NUL-terminated string and `out` valid for one
 pointer write. The handle must be released with [`hot_transport_free`].
 */
enum HotStatus hot_train(const char *config_json,
                         struct HotTransport **out,
                         struct HotMetrics *metrics_out);

/*
 Evaluates a handle on the held-out set defined by a JSON config.

 # Safety
 `handle` must be a live handle, `config_json` NUL-terminated and
 `metrics_out` valid for one write.
 */
enum HotStatus hot_evaluate(const struct HotTransport *handle,
                            const char *config_json,
                            struct HotMetrics *metrics_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HILBERT_OT_H */
