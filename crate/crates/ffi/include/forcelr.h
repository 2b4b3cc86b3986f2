#ifndef FORCELR_H
#define FORCELR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum FlrStatus {
  FLR_STATUS_OK = 0,
  FLR_STATUS_NULL_POINTER = 1,
  FLR_STATUS_INVALID_ARGUMENT = 2,
  FLR_STATUS_SHAPE = 3,
  /*
   Degenerate input or a solver that did not converge.
   */
  FLR_STATUS_NUMERICAL = 4,
  FLR_STATUS_IO = 5,
  FLR_STATUS_FORMAT = 6,
  FLR_STATUS_DIVERGENCE = 7,
  /*
   A Rust panic was caught at the boundary.
   */
  FLR_STATUS_PANIC = 8,
} FlrStatus;

typedef enum FlrForceKind {
  FLR_FORCE_KIND_L2 = 0,
  FLR_FORCE_KIND_L1 = 1,
} FlrForceKind;

typedef enum FlrScaler {
  FLR_SCALER_LENGTH = 0,
  FLR_SCALER_RECIPROCAL_LENGTH = 1,
} FlrScaler;

typedef enum FlrMethod {
  FLR_METHOD_PCA = 0,
  FLR_METHOD_SVD = 1,
  FLR_METHOD_KMEANS = 2,
} FlrMethod;

/*
 `W ≈ combination · basis`.
 */
typedef struct FlrFactorization FlrFactorization;

/*
 Row-major `N x D` filter matrix.
 */
typedef struct FlrFilterMatrix FlrFilterMatrix;

/*
 A network loaded from a model archive.
 */
typedef struct FlrModel FlrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 Valid until the next `flr_*` call on the same thread.
 */
const char *flr_last_error(void);

/*
 Library version, a static NUL-terminated string.
 */
const char *flr_version(void);

/*
 Copies `rows * cols` row-major values into a new filter matrix.

 # Safety
 `data` must point to `rows * cols` doubles; `out` must be writable.
 */
enum FlrStatus flr_filter_matrix_new(const double *data,
                                     size_t rows,
                                     size_t cols,
                                     struct FlrFilterMatrix **out);

/*
 # Safety
 `m` must be null or a handle from `flr_filter_matrix_new` not yet freed.
 */
void flr_filter_matrix_free(struct FlrFilterMatrix *m);

/*
 Writes the force regularization gradient `ΔW` (same shape as `m`).

 # Safety
 `m` must be a live handle; `out` must hold `out_len` doubles.
 */
enum FlrStatus flr_force_gradient(const struct FlrFilterMatrix *m,
                                  uint32_t kind,
                                  uint32_t step_scaler,
                                  double *out,
                                  size_t out_len);

/*
 Pairwise-distance regularizer of the normalized filters.

 # Safety
 `m` must be a live handle; `out` must be writable.
 */
enum FlrStatus flr_reference_regularizer(const struct FlrFilterMatrix *m,
                                         uint32_t kind,
                                         double *out);

/*
 `e_M / e_0` for `M = 1..=rows`, written to `out` (`rows` values).

 # Safety
 `m` must be a live handle; `out` must hold `out_len` doubles.
 */
enum FlrStatus flr_error_curve(const struct FlrFilterMatrix *m,
                               uint32_t method_id,
                               uint64_t seed,
                               double *out,
                               size_t out_len);

/*
 Smallest PCA rank whose relative reconstruction error is at most `tau`.

 # Safety
 `m` must be a live handle; `out` must be writable.
 */
enum FlrStatus flr_select_rank(const struct FlrFilterMatrix *m, double tau, size_t *out);

/*
 Rank-`rank` factorization of `m`.

 # Safety
 `m` must be a live handle; `out` must be writable.
 */
enum FlrStatus flr_factorize(const struct FlrFilterMatrix *m,
                             uint32_t method_id,
                             size_t rank,
                             uint64_t seed,
                             struct FlrFactorization **out);

/*
 # Safety
 `f` must be null or a handle from `flr_factorize` not yet freed.
 */
void flr_factorization_free(struct FlrFactorization *f);

/*
 Rank `M` of a factorization (0 for a null handle).

 # Safety
 `f` must be null or a live handle.
 */
size_t flr_factorization_rank(const struct FlrFactorization *f);

/*
 Copies the `M x cols` basis.

 # Safety
 `f` must be a live handle; `out` must hold `out_len` doubles.
 */
enum FlrStatus flr_factorization_basis(const struct FlrFactorization *f,
                                       double *out,
                                       size_t out_len);

/*
 Copies the `rows x M` combination coefficients.

 # Safety
 `f` must be a live handle; `out` must hold `out_len` doubles.
 */
enum FlrStatus flr_factorization_combination(const struct FlrFactorization *f,
                                             double *out,
                                             size_t out_len);

/*
 MAC ratio of an `N x C x H x W` convolution with `h_out x w_out` output
 to its rank-`m` split.
 */
double flr_theoretical_speedup(size_t n,
                               size_t c,
                               size_t h,
                               size_t w,
                               size_t h_out,
                               size_t w_out,
                               size_t m);

/*
 `NCHW / (CHW + N)`.
 */
double flr_break_even_rank(size_t n, size_t c, size_t h, size_t w);

/*
 Loads a model archive directory.

 # Safety
 `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum FlrStatus flr_model_load(const char *dir, struct FlrModel **out);

/*
 Saves a model archive directory, replacing any existing one.

 # Safety
 `m` must be a live handle; `dir` a NUL-terminated string.
 */
enum FlrStatus flr_model_save(const struct FlrModel *m, const char *dir);

/*
 # Safety
 `m` must be null or a handle from this library not yet freed.
 */
void flr_model_free(struct FlrModel *m);

/*
 Input shape `C, H, W` and number of classes.

 # Safety
 `m` must be a live handle; `shape` must hold 3 values, `classes` 1.
 */
enum FlrStatus flr_model_shape(const struct FlrModel *m, size_t *shape, size_t *classes);

/*
 Logits for `batch` inputs of `C*H*W` floats each; `out` receives
 `batch * classes` floats.

 # Safety
 `m` must be a live handle; buffers must hold the stated lengths.
 */
enum FlrStatus flr_model_forward(const struct FlrModel *m,
                                 const float *inputs,
                                 size_t batch,
                                 float *out,
                                 size_t out_len);

/*
 Decomposes every convolution; ranks come from `ranks` (one per
 convolution, `n_ranks` values) when non-null, otherwise from `tau`.

 # Safety
 `m` must be a live handle; `ranks` null or `n_ranks` values; `out` writable.
 */
enum FlrStatus flr_model_decompose(const struct FlrModel *m,
                                   uint32_t method_id,
                                   double tau,
                                   const size_t *ranks,
                                   size_t n_ranks,
                                   uint64_t seed,
                                   struct FlrModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FORCELR_H */
