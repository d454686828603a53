#ifndef ROBUSTMD_H
#define ROBUSTMD_H

#include <stddef.h>

typedef enum RmdStatus {
  RMD_STATUS_OK = 0,
  RMD_STATUS_NULL_POINTER = 1,
  RMD_STATUS_INVALID_INPUT = 2,
  RMD_STATUS_DIMENSION_MISMATCH = 3,
  RMD_STATUS_BUDGET_INFEASIBLE = 4,
  RMD_STATUS_NUMERICAL = 5,
  RMD_STATUS_CONFIG = 6,
  RMD_STATUS_PARSE = 7,
  RMD_STATUS_IO = 8,
  RMD_STATUS_PANIC = 9,
} RmdStatus;

/*
 Opaque experiment: a configuration being assembled.
 */
typedef struct RmdExperiment RmdExperiment;

/*
 Opaque geometry handle.
 */
typedef struct RmdGeometry RmdGeometry;

/*
 Opaque result of a run.
 */
typedef struct RmdResult RmdResult;

/*
 One trace record. Error fields are NaN when the truth is unknown.
 */
typedef struct RmdRecord {
  size_t stage;
  size_t iter;
  double elapsed_ms;
  double l2_error;
  double norm_error;
  double objective;
} RmdRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer stays
 valid until the next call into this library on the same thread.
 */
const char *rmd_last_error(void);

/*
 Trimmed mean of `n` values (quantiles from the first half, average of the
 clipped second half).

 # Safety
 `values` must point to `n` readable doubles and `out` to one writable double.
 */
enum RmdStatus rmd_trimmed_mean(const double *values, size_t n, double alpha, double *out);

/*
 `k`-th smallest (1-based) of `n` values.

 # Safety
 `values` must point to `n` readable doubles and `out` to one writable double.
 */
enum RmdStatus rmd_select_kth(const double *values, size_t n, size_t k, double *out);

/*
 Trimming level for corruption fraction `eta`, failure probability `delta`
 and `n` samples.

 # Safety
 `out` must point to one writable double.
 */
enum RmdStatus rmd_alpha_from_budget(double eta, double delta, size_t n, double *out);

/*
 Sparse vectors of dimension `d`.

 # Safety
 `out` must point to a writable handle pointer.
 */
enum RmdStatus rmd_geometry_vanilla(size_t d, struct RmdGeometry **out);

/*
 `rows x cols` parameters whose rows are the groups.

 # Safety
 `out` must point to a writable handle pointer.
 */
enum RmdStatus rmd_geometry_group(size_t rows, size_t cols, struct RmdGeometry **out);

/*
 Low-rank `p x q` matrices.

 # Safety
 `out` must point to a writable handle pointer.
 */
enum RmdStatus rmd_geometry_lowrank(size_t p, size_t q, struct RmdGeometry **out);

/*
 # Safety
 `geometry` must be null or a handle returned by a constructor and not yet freed.
 */
void rmd_geometry_free(struct RmdGeometry *geometry);

/*
 # Safety
 `geometry` must be a live handle; `rows` and `cols` writable.
 */
enum RmdStatus rmd_geometry_shape(const struct RmdGeometry *geometry, size_t *rows, size_t *cols);

/*
 Geometry norm of `theta`.

 # Safety
 `theta` must point to `len` readable doubles and `out` to one writable double.
 */
enum RmdStatus rmd_geometry_norm(const struct RmdGeometry *geometry,
                                 const double *theta,
                                 size_t len,
                                 double *out);

/*
 Dual norm of `theta`.

 # Safety
 `theta` must point to `len` readable doubles and `out` to one writable double.
 */
enum RmdStatus rmd_geometry_dual_norm(const struct RmdGeometry *geometry,
                                      const double *theta,
                                      size_t len,
                                      double *out);

/*
 Prox mapping of `w` onto the norm ball of `radius` around `center`.

 # Safety
 `w`, `center` and `out` must each point to `len` doubles.
 */
enum RmdStatus rmd_geometry_prox_ball(const struct RmdGeometry *geometry,
                                      const double *w,
                                      const double *center,
                                      size_t len,
                                      double radius,
                                      double *out);

/*
 Keeps the `s` largest coordinates, groups or singular values of `theta`.

 # Safety
 `theta` and `out` must each point to `len` doubles.
 */
enum RmdStatus rmd_geometry_sparsify(const struct RmdGeometry *geometry,
                                     const double *theta,
                                     size_t len,
                                     size_t s,
                                     double *out);

/*
 Parses a `key = value` configuration (may be empty for all defaults).

 # Safety
 `config_text` must be a NUL-terminated string; `out` a writable handle pointer.
 */
enum RmdStatus rmd_experiment_new(const char *config_text, struct RmdExperiment **out);

/*
 Overrides one key. On error the experiment is left unchanged.

 # Safety
 `experiment` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum RmdStatus rmd_experiment_set(struct RmdExperiment *experiment,
                                  const char *key,
                                  const char *value);

/*
 # Safety
 `experiment` must be null or a live handle.
 */
void rmd_experiment_free(struct RmdExperiment *experiment);

/*
 Runs all repeats. When a repeat fails numerically the result is still
 returned (holding the records made before the failure) together with
 `RMD_STATUS_NUMERICAL`.

 # Safety
 `experiment` must be a live handle; `out` a writable handle pointer.
 */
enum RmdStatus rmd_experiment_run(const struct RmdExperiment *experiment, struct RmdResult **out);

/*
 # Safety
 `result` must be null or a live handle.
 */
void rmd_result_free(struct RmdResult *result);

/*
 Number of repeats.

 # Safety
 `result` must be a live handle; `out` writable.
 */
enum RmdStatus rmd_result_repeats(const struct RmdResult *result, size_t *out);

/*
 Number of trace records of a repeat.

 # Safety
 `result` must be a live handle; `out` writable.
 */
enum RmdStatus rmd_result_record_count(const struct RmdResult *result, size_t repeat, size_t *out);

/*
 Trace record `index` of a repeat.

 # Safety
 `result` must be a live handle; `out` writable.
 */
enum RmdStatus rmd_result_record(const struct RmdResult *result,
                                 size_t repeat,
                                 size_t index,
                                 struct RmdRecord *out);

/*
 Final estimate of a repeat (column-major, `len` entries).

 # Safety
 `result` must be a live handle; `out` must point to `len` writable doubles.
 */
enum RmdStatus rmd_result_theta(const struct RmdResult *result,
                                size_t repeat,
                                double *out,
                                size_t len);

/*
 Writes the detail CSV (same format as the command line tool) to `path`.

 # Safety
 `result` must be a live handle; `path` a NUL-terminated string.
 */
enum RmdStatus rmd_result_write_detail(const struct RmdResult *result, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUSTMD_H */
