#ifndef PSSL_H
#define PSSL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PsslStatus {
  PSSL_STATUS_OK = 0,
  PSSL_STATUS_NULL_POINTER = 1,
  PSSL_STATUS_INVALID_STRING = 2,
  PSSL_STATUS_CONFIG = 3,
  PSSL_STATUS_DATA = 4,
  PSSL_STATUS_NUMERICS = 5,
  PSSL_STATUS_SHAPE = 6,
  PSSL_STATUS_CONTRACT = 7,
  PSSL_STATUS_IO = 8,
  PSSL_STATUS_PANIC = 9,
} PsslStatus;

/**
 * A classifier restored from a checkpoint.
 */
typedef struct PsslClassifier PsslClassifier;

/**
 * Preprocessed pulses of one signal.
 */
typedef struct PsslPulses PsslPulses;

/**
 * Cutoffs in Hz and Butterworth order.
 */
typedef struct PsslFilterSpec {
  double low_cut;
  double high_cut;
  uint32_t order;
} PsslFilterSpec;

/**
 * Confusion counts and derived scores, artifact as the positive class.
 */
typedef struct PsslMetrics {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t tn;
  double accuracy;
  double precision;
  double recall;
  double f1;
} PsslMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *pssl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pssl_version(void);

/**
 * Length of every pulse vector.
 */
size_t pssl_pulse_len(void);

struct PsslFilterSpec pssl_filter_default(void);

/**
 * Contrastive loss of one anchor.
 *
 * `kind` accepts the same spellings as the CLI (`smooth-infonce`, `nt_xent`, ...).
 * `negatives` holds `n_negatives` rows of `dim` values; all rows must be unit norm.
 *
 * # Safety
 * `anchor` and `positive` must point to `dim` doubles, `negatives` to
 * `n_negatives * dim` doubles, `kind` to a NUL-terminated string.
 */
enum PsslStatus pssl_contrastive_loss(const char *kind,
                                      double tau,
                                      double lambda,
                                      size_t dim,
                                      const double *anchor,
                                      const double *positive,
                                      const double *negatives,
                                      size_t n_negatives,
                                      double *out);

/**
 * Filter, segment, resample and normalize one signal.
 *
 * `filter` may be NULL for the default band.
 *
 * # Safety
 * `samples` must point to `n_samples` doubles and `out` to writable storage
 * for one handle.
 */
enum PsslStatus pssl_preprocess(const double *samples,
                                size_t n_samples,
                                double fs,
                                const struct PsslFilterSpec *filter,
                                struct PsslPulses **out);

/**
 * # Safety
 * `pulses` must be a live handle from [`pssl_preprocess`] or NULL.
 */
size_t pssl_pulses_count(const struct PsslPulses *pulses);

/**
 * Copy pulse `index` (normalized, 256 values) into `out`, and its source
 * sample span into `span` when `span` is not NULL.
 *
 * # Safety
 * `pulses` must be a live handle, `out` must hold 256 doubles and `span`,
 * when given, two `size_t`.
 */
enum PsslStatus pssl_pulses_get(const struct PsslPulses *pulses,
                                size_t index,
                                double *out,
                                size_t *span);

/**
 * Statistical labels (0 clean, 1 artifact) for every pulse of the signal.
 *
 * # Safety
 * `pulses` must be a live handle and `labels` must hold
 * [`pssl_pulses_count`] bytes.
 */
enum PsslStatus pssl_pulses_annotate(const struct PsslPulses *pulses, uint8_t *labels);

/**
 * # Safety
 * `pulses` must be a handle from [`pssl_preprocess`] not yet freed, or NULL.
 */
void pssl_pulses_free(struct PsslPulses *pulses);

/**
 * Restore a classifier written by `pssl finetune`.
 *
 * `config_path` names the TOML run config used in training, or NULL for defaults.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum PsslStatus pssl_classifier_load(const char *backbone,
                                     const char *checkpoint_path,
                                     const char *config_path,
                                     struct PsslClassifier **out);

/**
 * Predict labels (0 clean, 1 artifact) for `n_rows` pulses of 256 values each.
 *
 * # Safety
 * `clf` must be a live handle, `rows` must hold `n_rows * 256` doubles and
 * `labels` `n_rows` bytes.
 */
enum PsslStatus pssl_classifier_predict(const struct PsslClassifier *clf,
                                        const double *rows,
                                        size_t n_rows,
                                        uint8_t *labels);

/**
 * # Safety
 * `clf` must be a handle from [`pssl_classifier_load`] not yet freed, or NULL.
 */
void pssl_classifier_free(struct PsslClassifier *clf);

/**
 * Confusion-matrix metrics of `n` predictions against `truth` (bytes 0 or 1).
 *
 * # Safety
 * `pred` and `truth` must hold `n` bytes; `out` must be writable.
 */
enum PsslStatus pssl_metrics(const uint8_t *pred,
                             const uint8_t *truth,
                             size_t n,
                             struct PsslMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSSL_H */
