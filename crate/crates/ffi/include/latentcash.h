#ifndef LATENTCASH_H
#define LATENTCASH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  LC_STATUS_INVALID_UTF8 = 2,
  LC_STATUS_CONFIG = 3,
  LC_STATUS_DOMAIN = 4,
  LC_STATUS_SHAPE = 5,
  LC_STATUS_NUMERICAL = 6,
  LC_STATUS_VERSION = 7,
  LC_STATUS_FINGERPRINT = 8,
  LC_STATUS_CORRUPT = 9,
  LC_STATUS_EVALUATION = 10,
  LC_STATUS_IO = 11,
  LC_STATUS_PANIC = 12,
} LcStatus;

/**
 * Opaque pre-trained embedding bundle.
 */
typedef struct LcPtem LcPtem;

/**
 * Opaque search space.
 */
typedef struct LcSpace LcSpace;

/**
 * Opaque multi-task GP surrogate over a search space.
 */
typedef struct LcSurrogate LcSurrogate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * NUL-terminated) and returns its full length in bytes, excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lc_last_error_message(char *buf, size_t len);

/**
 * Parses a search space from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` a valid pointer.
 */
enum LcStatus lc_space_from_toml(const char *toml, struct LcSpace **out);

/**
 * The built-in four-algorithm synthetic benchmark space.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LcStatus lc_space_default(struct LcSpace **out);

/**
 * Number of algorithms, or 0 for a null handle.
 *
 * # Safety
 * `space` must be null or a live handle.
 */
size_t lc_space_num_algorithms(const struct LcSpace *space);

/**
 * Number of hyper-parameters of algorithm `algo`.
 *
 * # Safety
 * `space` must be a live handle; `out` a valid pointer.
 */
enum LcStatus lc_space_dim(const struct LcSpace *space, size_t algo, size_t *out);

/**
 * # Safety
 * `space` must be null or a handle not yet freed.
 */
void lc_space_free(struct LcSpace *space);

/**
 * Loads a PTEM file and checks it against `space`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `space` a live handle; `out` a
 * valid pointer.
 */
enum LcStatus lc_ptem_load(const char *path, const struct LcSpace *space, struct LcPtem **out);

/**
 * Latent dimension, or 0 for a null handle.
 *
 * # Safety
 * `ptem` must be null or a live handle.
 */
size_t lc_ptem_latent_dim(const struct LcPtem *ptem);

/**
 * Embeds one hyper-parameter vector of algorithm `algo`.
 *
 * # Safety
 * `x` must point to `x_len` doubles and `out` to `out_len` writable doubles.
 */
enum LcStatus lc_ptem_embed(const struct LcPtem *ptem,
                            size_t algo,
                            const double *x,
                            size_t x_len,
                            double *out,
                            size_t out_len);

/**
 * # Safety
 * `ptem` must be null or a handle not yet freed.
 */
void lc_ptem_free(struct LcPtem *ptem);

/**
 * Creates a surrogate. With a PTEM its embeddings and best score seed the
 * model; without one (`ptem` null) embeddings of dimension `latent_dim` are
 * drawn from `seed`.
 *
 * # Safety
 * `space` must be a live handle, `ptem` null or a live handle, `out` a
 * valid pointer.
 */
enum LcStatus lc_surrogate_new(const struct LcSpace *space,
                               const struct LcPtem *ptem,
                               size_t latent_dim,
                               uint64_t seed,
                               struct LcSurrogate **out);

/**
 * Fits the surrogate to `n` observations. `algos[i]` names the algorithm
 * of observation `i`; `xs` holds their unit-coordinate vectors back to back
 * (`xs_len` doubles in total) and `ys` their scores.
 *
 * # Safety
 * Array arguments must point to the stated number of elements.
 */
enum LcStatus lc_surrogate_fit(struct LcSurrogate *surrogate,
                               const uint32_t *algos,
                               const double *xs,
                               size_t xs_len,
                               const double *ys,
                               size_t n);

/**
 * Posterior mean and variance at one point of algorithm `algo`.
 *
 * # Safety
 * `x` must point to `x_len` doubles; `mean` and `var` must be valid.
 */
enum LcStatus lc_surrogate_posterior(const struct LcSurrogate *surrogate,
                                     size_t algo,
                                     const double *x,
                                     size_t x_len,
                                     double *mean,
                                     double *var);

/**
 * Maximizes expected improvement over `y_best` across all algorithms.
 * Writes the chosen algorithm, its unit-coordinate vector (into `x_out`,
 * which must hold the largest algorithm dimension; the written length goes
 * to `x_len_out`) and the EI value.
 *
 * # Safety
 * `x_out` must point to `x_cap` writable doubles; other outputs must be valid.
 */
enum LcStatus lc_surrogate_suggest(const struct LcSurrogate *surrogate,
                                   double y_best,
                                   uint64_t seed,
                                   size_t *algo_out,
                                   double *x_out,
                                   size_t x_cap,
                                   size_t *x_len_out,
                                   double *ei_out);

/**
 * # Safety
 * `surrogate` must be null or a handle not yet freed.
 */
void lc_surrogate_free(struct LcSurrogate *surrogate);

/**
 * `E[max(f - y_best, 0)]` for `f ~ N(mu, sigma^2)`.
 */
double lc_expected_improvement(double mu, double sigma, double y_best);

/**
 * NDCG@k of ordering `n` items by `predicted` given their `truth` scores.
 *
 * # Safety
 * `truth` and `predicted` must point to `n` doubles; `out` must be valid.
 */
enum LcStatus lc_ndcg_at_k(const double *truth,
                           const double *predicted,
                           size_t n,
                           size_t k,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATENTCASH_H */
