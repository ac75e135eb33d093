#ifndef VALENCE_H
#define VALENCE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ValenceStatus {
  VALENCE_STATUS_OK = 0,
  VALENCE_STATUS_NULL_POINTER = 1,
  VALENCE_STATUS_INVALID_ARGUMENT = 2,
  VALENCE_STATUS_IO = 3,
  VALENCE_STATUS_SIGNAL = 4,
  VALENCE_STATUS_MODEL = 5,
  VALENCE_STATUS_POSTERIOR = 6,
  VALENCE_STATUS_STATISTICS = 7,
  VALENCE_STATUS_PANIC = 8,
} ValenceStatus;

// Trained model handle.
typedef struct ValenceModel ValenceModel;

// R-peak sample indices returned by [`valence_detect_r_peaks`].
typedef struct ValencePeakList ValencePeakList;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *valence_last_error_message(void);

// Loads `model.meta`/`model.bin` from the directory `dir` (UTF-8 path).
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be valid for one write.
enum ValenceStatus valence_model_load(const char *dir, struct ValenceModel **out);

// Releases a model; NULL is ignored.
//
// # Safety
// `model` must come from [`valence_model_load`] and not be used afterwards.
void valence_model_free(struct ValenceModel *model);

// Input length the model was trained with, or 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t valence_model_input_length(const struct ValenceModel *model);

// Dropout-off prediction on the `[0, 1]` label scale for raw inter-beat
// intervals in seconds (z-scored, then padded or truncated to the input
// length).
//
// # Safety
// `model` must be a live handle, `ibi` must hold `len` values and `out`
// must be valid for one write.
enum ValenceStatus valence_model_predict(const struct ValenceModel *model,
                                         const double *ibi,
                                         size_t len,
                                         double *out);

// Writes `n_passes` Monte-Carlo dropout predictions for the intervals into
// `out_samples`.
//
// # Safety
// `model` must be a live handle, `ibi` must hold `len` values and
// `out_samples` must have room for `n_passes` values.
enum ValenceStatus valence_model_sample_posterior(const struct ValenceModel *model,
                                                  const double *ibi,
                                                  size_t len,
                                                  size_t n_passes,
                                                  uint64_t seed,
                                                  double *out_samples);

// Detects R-peaks in a single-lead ECG (millivolts) sampled at
// `sample_rate_hz`. The list is returned through `out`.
//
// # Safety
// `samples` must hold `len` values; `out` must be valid for one write.
enum ValenceStatus valence_detect_r_peaks(const double *samples,
                                          size_t len,
                                          double sample_rate_hz,
                                          struct ValencePeakList **out);

// Number of peaks, or 0 for NULL.
//
// # Safety
// `list` must be NULL or a live handle.
size_t valence_peak_list_len(const struct ValencePeakList *list);

// Peak sample indices, valid while the list is alive; NULL for NULL.
//
// # Safety
// `list` must be NULL or a live handle.
const size_t *valence_peak_list_data(const struct ValencePeakList *list);

// Releases a peak list; NULL is ignored.
//
// # Safety
// `list` must come from [`valence_detect_r_peaks`] and not be used
// afterwards.
void valence_peak_list_free(struct ValencePeakList *list);

// Z-scores `len` intervals and zero-pads them to `target_length` values in
// `out`.
//
// # Safety
// `ibi` must hold `len` values and `out` must have room for
// `target_length` values.
enum ValenceStatus valence_prepare_ibi(const double *ibi,
                                       size_t len,
                                       size_t target_length,
                                       double *out);

// Binary classify-or-abstain at threshold `alpha` with the boundary at 0.5.
// `out_zone` receives 0 (low), 1 (high) or -1 (abstain); `out_mass` the
// largest zone mass.
//
// # Safety
// `samples` must hold `n` values; outputs must be valid for one write.
enum ValenceStatus valence_classify(const double *samples,
                                    size_t n,
                                    double alpha,
                                    int32_t *out_zone,
                                    double *out_mass);

// Population variance of `n` posterior samples.
//
// # Safety
// `samples` must hold `n` values; `out` must be valid for one write.
enum ValenceStatus valence_posterior_variance(const double *samples, size_t n, double *out);

// Mann-Whitney U of `a` against `b` with its two-sided p-value (exact up to
// 20 values in total, normal approximation above).
//
// # Safety
// `a` and `b` must hold `na` and `nb` values; outputs must be valid for one
// write.
enum ValenceStatus valence_mann_whitney_u(const double *a,
                                          size_t na,
                                          const double *b,
                                          size_t nb,
                                          double *out_u,
                                          double *out_p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VALENCE_H */
