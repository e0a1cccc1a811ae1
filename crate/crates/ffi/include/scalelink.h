#ifndef SCALELINK_H
#define SCALELINK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlkStatus {
  SLK_STATUS_OK = 0,
  SLK_STATUS_NULL_POINTER = 1,
  SLK_STATUS_INVALID_ARGUMENT = 2,
  SLK_STATUS_IO = 3,
  SLK_STATUS_PARSE = 4,
  SLK_STATUS_SINGULAR = 5,
  SLK_STATUS_NUMERICAL = 6,
  SLK_STATUS_PANIC = 7,
} SlkStatus;

typedef enum SlkScenario {
  SLK_SCENARIO_MC_ONLY = 0,
  SLK_SCENARIO_MC_CR = 1,
} SlkScenario;

typedef enum SlkFamily {
  SLK_FAMILY_UIRT = 0,
  SLK_FAMILY_SIMPLE_STRUCTURE = 1,
  SLK_FAMILY_BIFACTOR = 2,
} SlkFamily;

/**
 * Item bank loaded from CSV.
 */
typedef struct SlkForm SlkForm;

/**
 * Estimated transformation and search diagnostics.
 */
typedef struct SlkLinkResult SlkLinkResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t slk_last_error_message(char *buf, size_t len);

/**
 * Loads an item-bank CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SlkStatus slk_form_from_csv(const char *path, struct SlkForm **out);

/**
 * Parses an item bank from in-memory CSV text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum SlkStatus slk_form_from_csv_text(const char *text, struct SlkForm **out);

/**
 * # Safety
 * `form` must be null or a handle from `slk_form_from_csv*` not yet freed.
 */
void slk_form_free(struct SlkForm *form);

/**
 * Number of items; 0 for a null handle.
 *
 * # Safety
 * `form` must be null or a live handle.
 */
size_t slk_form_len(const struct SlkForm *form);

/**
 * Latent dimension of the form's model family; 0 for a null handle.
 *
 * # Safety
 * `form` must be null or a live handle.
 */
size_t slk_form_dim(const struct SlkForm *form);

/**
 * Estimates the transformation placing `new_form` on `base`'s scale from
 * the scenario's anchors present in both banks.
 *
 * # Safety
 * `base` and `new_form` must be live handles; `out` must be writable.
 */
enum SlkStatus slk_link_estimate(const struct SlkForm *base,
                                 const struct SlkForm *new_form,
                                 enum SlkScenario scenario,
                                 struct SlkLinkResult **out);

/**
 * # Safety
 * `result` must be null or a handle from `slk_link_estimate` not yet freed.
 */
void slk_link_result_free(struct SlkLinkResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
size_t slk_link_result_dim(const struct SlkLinkResult *result);

/**
 * Copies `A` row-major into `out`, which must hold `dim * dim` doubles.
 *
 * # Safety
 * `result` must be a live handle; `out` must point to `len` writable doubles.
 */
enum SlkStatus slk_link_result_matrix(const struct SlkLinkResult *result, double *out, size_t len);

/**
 * Copies `B` into `out`, which must hold `dim` doubles.
 *
 * # Safety
 * `result` must be a live handle; `out` must point to `len` writable doubles.
 */
enum SlkStatus slk_link_result_location(const struct SlkLinkResult *result,
                                        double *out,
                                        size_t len);

/**
 * Final loss; NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double slk_link_result_loss(const struct SlkLinkResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
bool slk_link_result_converged(const struct SlkLinkResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
bool slk_link_result_condition_warning(const struct SlkLinkResult *result);

/**
 * Probability of a correct response to an MC item under the given family's
 * loading pattern; `a` and `theta` have `dim` entries.
 *
 * # Safety
 * `a` and `theta` must point to `dim` doubles; `out` must be writable.
 */
enum SlkStatus slk_prob_3pl(enum SlkFamily family,
                            const double *a,
                            const double *theta,
                            size_t dim,
                            double d,
                            double c,
                            double *out);

/**
 * Category probabilities `0..=n_deltas` of a CR item; `out` must hold
 * `n_deltas + 1` doubles.
 *
 * # Safety
 * `a` and `theta` must point to `dim` doubles, `deltas` to `n_deltas`
 * doubles, and `out` to `out_len` writable doubles.
 */
enum SlkStatus slk_prob_gpc(enum SlkFamily family,
                            const double *a,
                            const double *theta,
                            size_t dim,
                            const double *deltas,
                            size_t n_deltas,
                            double *out,
                            size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCALELINK_H */
