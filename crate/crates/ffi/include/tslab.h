#ifndef TSLAB_H
#define TSLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TslabStatus {
  TSLAB_STATUS_OK = 0,
  TSLAB_STATUS_NULL_POINTER = 1,
  TSLAB_STATUS_INVALID_ARGUMENT = 2,
  TSLAB_STATUS_DIMENSION_MISMATCH = 3,
  TSLAB_STATUS_BUFFER_TOO_SMALL = 4,
  TSLAB_STATUS_NUMERIC_ABORT = 5,
  TSLAB_STATUS_INTERNAL = 6,
} TslabStatus;

typedef enum TslabActivation {
  TSLAB_ACTIVATION_RELU = 0,
  TSLAB_ACTIVATION_ABS = 1,
} TslabActivation;

/*
 Opaque student ensemble.
 */
typedef struct TslabEnsemble TslabEnsemble;

/*
 Opaque table of Hermite coefficients.
 */
typedef struct TslabTable TslabTable;

/*
 Opaque teacher network.
 */
typedef struct TslabTeacher TslabTeacher;

/*
 Training settings; fill with `tslab_train_config_default` first.
 */
typedef struct TslabTrainConfig {
  size_t d;
  size_t m;
  size_t n_samples;
  double kappa;
  bool random_rotation;
  double eta;
  double lambda0;
  double lambda1;
  double threshold_factor;
  size_t t1_iters;
  size_t t2_iters;
  size_t j_max;
  size_t log_every;
  uint64_t seed_teacher;
  uint64_t seed_data;
  uint64_t seed_init;
  bool population;
  enum TslabActivation learner;
} TslabTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread; empty if none. Valid
 until the next failing call.
 */
const char *tslab_last_error(void);

/*
 Teacher with `a` on the simplex and orthonormal rows of `w_star` (`d×d`,
 row-major). Abs activation.

 # Safety
 `a` must hold `d` values, `w_star` `d*d` values; `out` must be writable.
 */
enum TslabStatus tslab_teacher_new(size_t d,
                                   const double *a,
                                   const double *w_star,
                                   struct TslabTeacher **out);

/*
 Random teacher: weights within ratio `kappa`, identity or Haar rotation.

 # Safety
 `out` must be writable.
 */
enum TslabStatus tslab_teacher_sample(size_t d,
                                      double kappa,
                                      bool random_rotation,
                                      uint64_t seed,
                                      struct TslabTeacher **out);

/*
 # Safety
 `teacher` must come from a `tslab_teacher_*` constructor or be null.
 */
void tslab_teacher_free(struct TslabTeacher *teacher);

/*
 # Safety
 `teacher` must be a live handle; returns 0 for null.
 */
size_t tslab_teacher_dim(const struct TslabTeacher *teacher);

/*
 `f*(x)` for one input of length `d`.

 # Safety
 `x` must hold `d` values and `out` be writable.
 */
enum TslabStatus tslab_teacher_label(const struct TslabTeacher *teacher,
                                     const double *x,
                                     size_t d,
                                     double *out);

/*
 Ensemble from `m×d` row-major weights.

 # Safety
 `weights` must hold `m*d` values; `out` must be writable.
 */
enum TslabStatus tslab_ensemble_new(size_t m,
                                    size_t d,
                                    const double *weights,
                                    enum TslabActivation activation,
                                    struct TslabEnsemble **out);

/*
 `m` neurons drawn i.i.d. from `N(0, I/d)`.

 # Safety
 `out` must be writable.
 */
enum TslabStatus tslab_ensemble_init(size_t d,
                                     size_t m,
                                     enum TslabActivation activation,
                                     uint64_t seed,
                                     struct TslabEnsemble **out);

/*
 # Safety
 `ensemble` must come from a `tslab_ensemble_*` constructor or be null.
 */
void tslab_ensemble_free(struct TslabEnsemble *ensemble);

/*
 # Safety
 `ensemble` must be a live handle; returns 0 for null.
 */
size_t tslab_ensemble_width(const struct TslabEnsemble *ensemble);

/*
 # Safety
 `ensemble` must be a live handle; returns 0 for null.
 */
size_t tslab_ensemble_dim(const struct TslabEnsemble *ensemble);

/*
 Copies the `m×d` weights into `buf`.

 # Safety
 `buf` must hold `len` values.
 */
enum TslabStatus tslab_ensemble_weights(const struct TslabEnsemble *ensemble,
                                        double *buf,
                                        size_t len);

/*
 `f_W(x)` for one input of length `d`.

 # Safety
 `x` must hold `d` values and `out` be writable.
 */
enum TslabStatus tslab_ensemble_predict(const struct TslabEnsemble *ensemble,
                                        const double *x,
                                        size_t d,
                                        double *out);

/*
 Hermite coefficients of abs and ReLU through order `k_max`.

 # Safety
 `out` must be writable.
 */
enum TslabStatus tslab_table_new(size_t k_max, struct TslabTable **out);

/*
 # Safety
 `table` must come from `tslab_table_new` or be null.
 */
void tslab_table_free(struct TslabTable *table);

/*
 Normalized Hermite coefficient of order `k` for `activation`.

 # Safety
 `out` must be writable.
 */
enum TslabStatus tslab_table_coeff(const struct TslabTable *table,
                                   enum TslabActivation activation,
                                   size_t k,
                                   double *out);

/*
 Per-order losses for orders `0, 1, 2, 4, …, j_max` written to `losses`
 (`*written` entries), plus the total and the tail bound.

 # Safety
 `losses` must hold `cap` values; the scalar outputs must be writable.
 */
enum TslabStatus tslab_decompose(const struct TslabEnsemble *ensemble,
                                 const struct TslabTeacher *teacher,
                                 const struct TslabTable *table,
                                 size_t j_max,
                                 double *losses,
                                 size_t cap,
                                 size_t *written,
                                 double *total,
                                 double *tail_bound);

/*
 Gradient of the decomposed loss through `j_max`, `m×d` row-major.

 # Safety
 `grad` must hold `len` values.
 */
enum TslabStatus tslab_population_gradient(const struct TslabEnsemble *ensemble,
                                           const struct TslabTeacher *teacher,
                                           const struct TslabTable *table,
                                           size_t j_max,
                                           double *grad,
                                           size_t len);

/*
 Library defaults for [`TslabTrainConfig`].

 # Safety
 `out` must be writable.
 */
enum TslabStatus tslab_train_config_default(struct TslabTrainConfig *out);

/*
 Runs both training stages. On success `*ensemble` receives the trained
 network and `*final_loss` the last logged loss.

 # Safety
 `config` must point to an initialized config; outputs must be writable.
 */
enum TslabStatus tslab_train(const struct TslabTrainConfig *config,
                             struct TslabEnsemble **ensemble,
                             double *final_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSLAB_H */
