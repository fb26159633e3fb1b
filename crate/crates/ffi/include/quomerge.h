#ifndef QUOMERGE_H
#define QUOMERGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QmMergeMode {
  QM_MERGE_MODE_GEODESIC = 0,
  QM_MERGE_MODE_GEODESIC_CAYLEY = 1,
  QM_MERGE_MODE_EUCLID = 2,
  QM_MERGE_MODE_FISHER = 3,
} QmMergeMode;

typedef enum QmStatus {
  QM_STATUS_OK = 0,
  QM_STATUS_NULL_POINTER = 1,
  QM_STATUS_INVALID_ARGUMENT = 2,
  QM_STATUS_LAYER_MISMATCH = 3,
  QM_STATUS_NOT_CONVERGED = 4,
  QM_STATUS_LIFT_DEGENERATE = 5,
  QM_STATUS_IO = 6,
  QM_STATUS_FORMAT = 7,
  QM_STATUS_NUMERICAL = 8,
  QM_STATUS_BUFFER_TOO_SMALL = 9,
  QM_STATUS_PANIC = 10,
} QmStatus;

/**
 * An adapter bundle.
 */
typedef struct QmBundle QmBundle;

/**
 * A point of the quotient manifold.
 */
typedef struct QmPoint QmPoint;

/**
 * Merge settings. Start from [`qm_merge_options_default`].
 */
typedef struct QmMergeOptions {
  enum QmMergeMode mode;
  /**
   * Target rank; 0 keeps the input rank.
   */
  size_t rank_lift;
  double alpha;
  double tol;
  size_t max_iter;
  double scale;
  uint64_t seed;
  /**
   * Worker threads; 0 uses the global pool.
   */
  size_t jobs;
  /**
   * Fail on rank-deficient inputs instead of clamping.
   */
  bool strict_rank;
  /**
   * Return the merged bundle even when some layer did not converge.
   */
  bool allow_nonconverged;
} QmMergeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *qm_version(void);

/**
 * Message for the last failed call on this thread, or null after a
 * successful call. Valid until the next call on the same thread.
 */
const char *qm_last_error(void);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum QmStatus qm_bundle_read(const char *path, struct QmBundle **out);

/**
 * # Safety
 * `bundle` must come from this library and `path` be nul-terminated.
 */
enum QmStatus qm_bundle_write(const struct QmBundle *bundle, const char *path);

/**
 * # Safety
 * `bundle` must be null or a handle from this library not yet freed.
 */
void qm_bundle_free(struct QmBundle *bundle);

/**
 * # Safety
 * Pointers must be valid.
 */
enum QmStatus qm_bundle_layer_count(const struct QmBundle *bundle, size_t *out);

/**
 * Copies the nul-terminated name of layer `index` into `buf`. `needed`,
 * when non-null, receives the required size including the terminator.
 *
 * # Safety
 * `buf` must hold `len` bytes.
 */
enum QmStatus qm_bundle_layer_name(const struct QmBundle *bundle,
                                   size_t index,
                                   char *buf,
                                   size_t len,
                                   size_t *needed);

/**
 * Output rows, input columns and rank of layer `index`. Null outputs are
 * skipped.
 *
 * # Safety
 * Non-null pointers must be valid.
 */
enum QmStatus qm_bundle_layer_shape(const struct QmBundle *bundle,
                                    size_t index,
                                    size_t *d_out,
                                    size_t *d_in,
                                    size_t *rank);

/**
 * Writes the dense update of layer `index`, `d_out * d_in` values.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum QmStatus qm_bundle_layer_dense(const struct QmBundle *bundle,
                                    size_t index,
                                    double *out,
                                    size_t len);

struct QmMergeOptions qm_merge_options_default(void);

/**
 * Merges `n` bundles. `weights` may be null for uniform weights; otherwise
 * it holds `n` nonnegative values summing to one. `options` may be null for
 * the defaults.
 *
 * # Safety
 * `bundles` must hold `n` valid handles.
 */
enum QmStatus qm_merge(const struct QmBundle *const *bundles,
                       size_t n,
                       const double *weights_ptr,
                       const struct QmMergeOptions *options,
                       struct QmBundle **out);

/**
 * Per-layer quotient distance between two bundles with the same layers,
 * written in the layer order of `a`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum QmStatus qm_bundle_distance(const struct QmBundle *a,
                                 const struct QmBundle *b,
                                 bool strict_rank,
                                 double *out,
                                 size_t len);

/**
 * Builds a point from the low-rank pair `G` (`d_out x r`) and `H`
 * (`d_in x r`), representing `G Hᵀ`.
 *
 * # Safety
 * `g` must hold `d_out * r` and `h` `d_in * r` doubles.
 */
enum QmStatus qm_point_from_lowrank(const double *g,
                                    size_t d_out,
                                    const double *h,
                                    size_t d_in,
                                    size_t r,
                                    struct QmPoint **out);

/**
 * # Safety
 * `point` must be null or a handle from this library not yet freed.
 */
void qm_point_free(struct QmPoint *point);

/**
 * # Safety
 * Non-null pointers must be valid.
 */
enum QmStatus qm_point_shape(const struct QmPoint *point,
                             size_t *d_out,
                             size_t *d_in,
                             size_t *rank);

/**
 * Writes `U B Vᵀ`, `d_out * d_in` values.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum QmStatus qm_point_dense(const struct QmPoint *point, double *out, size_t len);

/**
 * # Safety
 * Pointers must be valid.
 */
enum QmStatus qm_point_distance(const struct QmPoint *p, const struct QmPoint *q, double *out);

/**
 * Weighted quotient Fréchet mean of `n` points of equal shape and rank.
 * `weights` may be null for uniform weights. `iterations`, when non-null,
 * receives the iteration count. Returns `QM_STATUS_NOT_CONVERGED` without
 * a result if the iteration stops early.
 *
 * # Safety
 * `points` must hold `n` valid handles.
 */
enum QmStatus qm_frechet_mean(const struct QmPoint *const *points,
                              size_t n,
                              const double *weights_ptr,
                              size_t *iterations,
                              struct QmPoint **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUOMERGE_H */
