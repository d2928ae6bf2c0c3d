#ifndef SENTIBERT_H
#define SENTIBERT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SbRule {
  SB_RULE_NTC_SV = 0,
  SB_RULE_VREVIEW = 1,
} SbRule;

typedef enum SbStatus {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_ARGUMENT = 1,
  SB_STATUS_INVALID_UTF8 = 2,
  SB_STATUS_IO = 3,
  SB_STATUS_PARSE = 4,
  SB_STATUS_VALIDATION = 5,
  SB_STATUS_INTEGRITY = 6,
  SB_STATUS_VERSION = 7,
  SB_STATUS_CONFIG = 8,
  SB_STATUS_PANIC = 9,
  SB_STATUS_OTHER = 10,
} SbStatus;

/**
 * A fine-tuned classifier checkpoint.
 */
typedef struct SbModel SbModel;

/**
 * A loaded subword vocabulary.
 */
typedef struct SbVocab SbVocab;

/**
 * Positive-class counts and scores.
 */
typedef struct SbMetrics {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t tn;
  double precision;
  double recall;
  double f1;
} SbMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sb_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library on the same thread.
 */
const char *sb_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out_vocab` writable.
 */
enum SbStatus sb_vocab_load(const char *path, struct SbVocab **out_vocab);

/**
 * # Safety
 * `vocab` must come from `sb_vocab_load` and not be used afterwards.
 */
void sb_vocab_free(struct SbVocab *vocab);

/**
 * # Safety
 * `vocab` must be a live handle and `out_size` writable.
 */
enum SbStatus sb_vocab_size(const struct SbVocab *vocab, size_t *out_size);

/**
 * Encodes `text` to exactly `seq_len` ids and mask flags.
 *
 * # Safety
 * `ids` and `mask` must each hold `seq_len` elements.
 */
enum SbStatus sb_encode(const struct SbVocab *vocab,
                        const char *text_in,
                        size_t seq_len,
                        uint32_t *ids,
                        uint8_t *mask,
                        size_t *out_real_length);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out_model` writable.
 */
enum SbStatus sb_model_load(const char *path, struct SbModel **out_model);

/**
 * # Safety
 * `model` must come from `sb_model_load` and not be used afterwards.
 */
void sb_model_free(struct SbModel *model);

/**
 * Label (1 positive, 0 negative) and positive-class probability of one text.
 *
 * # Safety
 * Handles must be live; outputs writable.
 */
enum SbStatus sb_model_predict(const struct SbModel *model,
                               const struct SbVocab *vocab,
                               const char *text_in,
                               int32_t *out_label,
                               double *out_probability);

/**
 * Applies a labeling rule: 1 positive, 0 negative, -1 dropped.
 *
 * # Safety
 * `out_label` must be writable.
 */
enum SbStatus sb_label_score(enum SbRule rule, double score, int32_t *out_label);

/**
 * Positive-class metrics of `n` paired 0/1 labels.
 *
 * # Safety
 * `gold` and `predicted` must each hold `n` elements.
 */
enum SbStatus sb_metrics(const uint8_t *gold,
                         const uint8_t *predicted,
                         size_t n,
                         struct SbMetrics *out_metrics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SENTIBERT_H */
