#ifndef ATTNCUT_H
#define ATTNCUT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AttncutStatus {
  ATTNCUT_STATUS_OK = 0,
  ATTNCUT_STATUS_NULL_POINTER = 1,
  ATTNCUT_STATUS_INVALID_ARGUMENT = 2,
  ATTNCUT_STATUS_SHAPE = 3,
  ATTNCUT_STATUS_IO = 4,
  ATTNCUT_STATUS_CHECKPOINT = 5,
  ATTNCUT_STATUS_NUMERIC = 6,
  ATTNCUT_STATUS_PANIC = 7,
} AttncutStatus;

/**
 * Opaque handle owning a generator loaded from a checkpoint.
 */
typedef struct AttncutTranslator AttncutTranslator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length plus one.
 *
 * # Safety
 * `buf` must be null or valid for `len` writable bytes.
 */
size_t attncut_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *attncut_version(void);

/**
 * Loads the generator of a training checkpoint.
 *
 * # Safety
 * `checkpoint_path` must be a NUL-terminated UTF-8 string; `out` must be
 * writable. Release the handle with [`attncut_translator_free`].
 */
enum AttncutStatus attncut_translator_open(const char *checkpoint_path,
                                           struct AttncutTranslator **out);

/**
 * # Safety
 * `translator` must come from [`attncut_translator_open`] and not be used afterwards.
 */
void attncut_translator_free(struct AttncutTranslator *translator);

/**
 * Translates one packed RGB image (`width × height × 3` bytes, row-major)
 * into `out_pixels` of the same size.
 *
 * # Safety
 * `pixels` and `out_pixels` must each be valid for `width·height·3` bytes.
 */
enum AttncutStatus attncut_translate_rgb8(const struct AttncutTranslator *translator,
                                          const uint8_t *pixels,
                                          uint32_t width,
                                          uint32_t height,
                                          uint8_t *out_pixels);

/**
 * Fréchet distance between two row-major feature matrices.
 *
 * # Safety
 * `a` and `b` must hold `m_a·dim` and `m_b·dim` doubles; `out` must be writable.
 */
enum AttncutStatus attncut_fid(const double *a,
                               size_t m_a,
                               const double *b,
                               size_t m_b,
                               size_t dim,
                               double *out);

/**
 * Sliced Wasserstein distance (order 2) between two row-major feature matrices.
 *
 * # Safety
 * As for [`attncut_fid`].
 */
enum AttncutStatus attncut_swd(const double *a,
                               size_t m_a,
                               const double *b,
                               size_t m_b,
                               size_t dim,
                               size_t n_projections,
                               uint64_t seed,
                               double *out);

/**
 * Inception Score of `m` row-major probability rows over `classes` classes.
 *
 * # Safety
 * `probs` must hold `m·classes` doubles; `mean` and `std` must be writable.
 */
enum AttncutStatus attncut_inception_score(const double *probs,
                                           size_t m,
                                           size_t classes,
                                           size_t splits,
                                           double *mean,
                                           double *std);

/**
 * InfoNCE cross-entropy for one query, its positive and `n_negatives`
 * row-major negatives, all unit vectors of length `dim`.
 *
 * # Safety
 * Pointers must hold `dim`, `dim` and `n_negatives·dim` doubles; `out` must be writable.
 */
enum AttncutStatus attncut_info_nce(const double *query,
                                    const double *positive,
                                    const double *negatives,
                                    size_t n_negatives,
                                    size_t dim,
                                    double tau,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTNCUT_H */
