#ifndef LPATH_H
#define LPATH_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define LPATH_OK 0

/**
 * A required pointer argument was null.
 */
#define LPATH_ERR_NULL 1

/**
 * Invalid configuration or argument outside its domain.
 */
#define LPATH_ERR_CONFIG 2

/**
 * Malformed input, wrong shape or unreadable file format.
 */
#define LPATH_ERR_INPUT 3

/**
 * Non-finite value or singular matrix during computation.
 */
#define LPATH_ERR_NUMERIC 4

#define LPATH_ERR_IO 5

/**
 * A Rust panic was caught at the boundary.
 */
#define LPATH_ERR_PANIC 6

/**
 * Fitted two-stage detector: conditioning pipeline, scorer and threshold.
 */
typedef struct LpathDetector LpathDetector;

/**
 * Trained VAE.
 */
typedef struct LpathVae LpathVae;

typedef int32_t LpathStatus;

/**
 * Residual (u), latent mean (v) and latent sigma (w) norms of one sample.
 */
typedef struct LpathStats {
  double u_l2;
  double u_lp;
  double u_lq;
  double v_l2;
  double v_lp;
  double v_lq;
  double w_l2;
  double w_lp;
  double w_lq;
  double p;
  double q;
} LpathStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lpath_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lpath_last_error(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
LpathStatus lpath_vae_load(const char *path, struct LpathVae **out);

/**
 * Loads a checkpoint from memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be writable.
 */
LpathStatus lpath_vae_load_bytes(const uint8_t *bytes, size_t len, struct LpathVae **out);

/**
 * # Safety
 * `vae` must be null or a handle from `lpath_vae_load*` not yet freed.
 */
void lpath_vae_free(struct LpathVae *vae);

/**
 * Input dimension, or 0 for a null handle.
 *
 * # Safety
 * `vae` must be null or a live handle.
 */
size_t lpath_vae_input_dim(const struct LpathVae *vae);

/**
 * Latent dimension, or 0 for a null handle.
 *
 * # Safety
 * `vae` must be null or a live handle.
 */
size_t lpath_vae_latent_dim(const struct LpathVae *vae);

/**
 * Posterior mean and standard deviation of one input.
 *
 * # Safety
 * `x` holds `n` values; `mu` and `sigma` each have room for `m` values.
 */
LpathStatus lpath_vae_encode(const struct LpathVae *vae,
                             const double *x,
                             size_t n,
                             double *mu,
                             double *sigma,
                             size_t m);

/**
 * Decoder mean at one latent point.
 *
 * # Safety
 * `z` holds `m` values; `x` has room for `n` values.
 */
LpathStatus lpath_vae_decode(const struct LpathVae *vae,
                             const double *z,
                             size_t m,
                             double *x,
                             size_t n);

/**
 * Norm statistics of one input with exponents `p` and `q`.
 *
 * # Safety
 * `x` holds `n` values; `out` is writable.
 */
LpathStatus lpath_vae_extract_stats(const struct LpathVae *vae,
                                    const double *x,
                                    size_t n,
                                    double p,
                                    double q,
                                    struct LpathStats *out);

/**
 * Row-wise statistics of a row-major `rows × n` matrix.
 *
 * # Safety
 * `x` holds `rows * n` values; `out` has room for `rows` records.
 */
LpathStatus lpath_vae_extract_stats_batch(const struct LpathVae *vae,
                                          const double *x,
                                          size_t rows,
                                          size_t n,
                                          double p,
                                          double q,
                                          struct LpathStats *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
LpathStatus lpath_detector_load(const char *path, struct LpathDetector **out);

/**
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be writable.
 */
LpathStatus lpath_detector_load_bytes(const uint8_t *bytes, size_t len, struct LpathDetector **out);

/**
 * # Safety
 * `det` must be null or a handle from `lpath_detector_load*` not yet freed.
 */
void lpath_detector_free(struct LpathDetector *det);

/**
 * Number of feature columns, or 0 for a null handle.
 *
 * # Safety
 * `det` must be null or a live handle.
 */
size_t lpath_detector_dim(const struct LpathDetector *det);

/**
 * Decision threshold on the score (flag when score > threshold).
 *
 * # Safety
 * `det` must be a live handle and `out` writable.
 */
LpathStatus lpath_detector_threshold(const struct LpathDetector *det, double *out);

/**
 * Scores one feature row. `is_ood` may be null.
 *
 * # Safety
 * `x` holds `d` values; `score` is writable; `is_ood` is null or writable.
 */
LpathStatus lpath_detector_score(const struct LpathDetector *det,
                                 const double *x,
                                 size_t d,
                                 double *score,
                                 bool *is_ood);

/**
 * Scores a row-major `rows × d` feature matrix into `scores`.
 *
 * # Safety
 * `x` holds `rows * d` values; `scores` has room for `rows` values.
 */
LpathStatus lpath_detector_score_batch(const struct LpathDetector *det,
                                       const double *x,
                                       size_t rows,
                                       size_t d,
                                       double *scores);

/**
 * Area under the ROC curve with OOD as the positive class; ties count half.
 *
 * # Safety
 * `iid` and `ood` hold `n_iid` and `n_ood` values; `out` is writable.
 */
LpathStatus lpath_auroc(const double *iid,
                        size_t n_iid,
                        const double *ood,
                        size_t n_ood,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LPATH_H */
