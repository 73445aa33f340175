#ifndef SPEAKMATCH_H
#define SPEAKMATCH_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_NULL_POINTER = 1,
  SM_STATUS_INVALID_ARGUMENT = 2,
  SM_STATUS_IO = 3,
  SM_STATUS_PARSE = 4,
  SM_STATUS_VALIDATION = 5,
  SM_STATUS_PIN_CONFLICT = 6,
  SM_STATUS_TOO_LARGE = 7,
  SM_STATUS_INTERNAL = 8,
  SM_STATUS_PANIC = 9,
} SmStatus;

/**
 * Segments, tracks and pins ready to solve.
 */
typedef struct SmProblem SmProblem;

/**
 * Output of [`sm_assign`].
 */
typedef struct SmResult SmResult;

/**
 * Solver and pipeline settings. Obtain defaults from [`sm_config_default`].
 */
typedef struct SmConfig {
  size_t partition_size;
  size_t max_epochs;
  double convergence_eps;
  double tie_eps;
  uint64_t seed;
  size_t restarts;
  bool exclude_diagonal;
  double tau;
  bool stage2;
  double min_overlap;
  /**
   * 0 uses every core.
   */
  size_t workers;
} SmConfig;

/**
 * One segment's decision, borrowed from an [`SmResult`].
 */
typedef struct SmAssignment {
  const char *segment_id;
  /**
   * NULL when the segment is off-screen.
   */
  const char *track_id;
  /**
   * Row correlation of the stage-1 choice.
   */
  double score;
  bool offscreen;
} SmAssignment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Default settings: partitions of 500, 50 epochs, tau 0.1, stage 2 on.
 */
struct SmConfig sm_config_default(void);

/**
 * Library version, static storage.
 */
const char *sm_version(void);

/**
 * Message for the last failed call on this thread; empty after success.
 */
const char *sm_last_error_message(void);

/**
 * Loads a problem from `segments.jsonl`, `tracks.jsonl` and an optional
 * pins file (`pins_path` may be NULL).
 *
 * # Safety
 * Path arguments must be NUL-terminated strings; `out` must be writable.
 */
enum SmStatus sm_problem_from_files(const char *segments_path,
                                    const char *tracks_path,
                                    const char *pins_path,
                                    struct SmProblem **out);

/**
 * Builds a problem from raw arrays. Embeddings are row-major
 * (`n_segments x audio_dim`, `n_tracks x visual_dim`). Id arrays may be
 * NULL, in which case ids are `s<i>` and `t<j>`.
 *
 * # Safety
 * Every non-NULL pointer must reference at least the stated number of
 * elements; `out` must be writable.
 */
enum SmStatus sm_problem_new(size_t n_segments,
                             const char *const *segment_ids,
                             const double *segment_starts,
                             const double *segment_ends,
                             const double *segment_embeddings,
                             size_t audio_dim,
                             size_t n_tracks,
                             const char *const *track_ids,
                             const double *track_starts,
                             const double *track_ends,
                             const double *track_embeddings,
                             size_t visual_dim,
                             struct SmProblem **out);

/**
 * Freezes `segment_id` to `track_id` during optimization.
 *
 * # Safety
 * `problem` must come from an `sm_problem_*` constructor; ids must be
 * NUL-terminated strings.
 */
enum SmStatus sm_problem_pin(struct SmProblem *problem,
                             const char *segment_id,
                             const char *track_id);

/**
 * Number of segments in the problem, 0 for NULL.
 *
 * # Safety
 * `problem` must be NULL or a live handle.
 */
size_t sm_problem_segment_count(const struct SmProblem *problem);

/**
 * # Safety
 * `problem` must be NULL or a handle not yet freed.
 */
void sm_problem_free(struct SmProblem *problem);

/**
 * Runs stage 1 and (if enabled) stage 2. `config` may be NULL for defaults.
 *
 * # Safety
 * `problem` must be a live handle, `config` NULL or valid, `out` writable.
 */
enum SmStatus sm_assign(const struct SmProblem *problem,
                        const struct SmConfig *config,
                        struct SmResult **out);

/**
 * Number of assigned segments, 0 for NULL.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
size_t sm_result_len(const struct SmResult *result);

/**
 * Copies entry `index` into `out`. The strings stay owned by `result`.
 *
 * # Safety
 * `result` must be a live handle and `out` writable.
 */
enum SmStatus sm_result_get(const struct SmResult *result, size_t index, struct SmAssignment *out);

/**
 * Whether every partition converged before `max_epochs`.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
bool sm_result_converged(const struct SmResult *result);

/**
 * Mean of the partition objectives; NaN for NULL or an empty result.
 *
 * # Safety
 * `result` must be NULL or a live handle.
 */
double sm_result_mean_objective(const struct SmResult *result);

/**
 * Writes the result in the `assignments.jsonl` format.
 *
 * # Safety
 * `result` must be a live handle and `path` a NUL-terminated string.
 */
enum SmStatus sm_result_write_jsonl(const struct SmResult *result, const char *path);

/**
 * # Safety
 * `result` must be NULL or a handle not yet freed.
 */
void sm_result_free(struct SmResult *result);

/**
 * Cosine distance `1 - cos(a, b)` of two `dim`-vectors.
 *
 * # Safety
 * `a` and `b` must hold `dim` doubles; `out` must be writable.
 */
enum SmStatus sm_cosine_distance(const double *a, const double *b, size_t dim, double *out);

/**
 * Mean row-wise Pearson correlation of two `n x n` row-major distance
 * matrices (symmetric, zero diagonal, entries in [0, 2]).
 *
 * # Safety
 * `sd` and `fd` must hold `n * n` doubles; `out` must be writable.
 */
enum SmStatus sm_corr_objective(const double *sd,
                                const double *fd,
                                size_t n,
                                bool exclude_diagonal,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPEAKMATCH_H */
