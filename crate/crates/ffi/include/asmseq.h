#ifndef ASMSEQ_H
#define ASMSEQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AsmseqStatus {
  ASMSEQ_STATUS_OK = 0,
  ASMSEQ_STATUS_NULL_POINTER = 1,
  ASMSEQ_STATUS_INVALID_ARGUMENT = 2,
  ASMSEQ_STATUS_IO = 3,
  ASMSEQ_STATUS_PARSE = 4,
  ASMSEQ_STATUS_INFEASIBLE = 5,
  ASMSEQ_STATUS_PANIC = 6,
} AsmseqStatus;

/**
 * A trained model loaded from a model file.
 */
typedef struct AsmseqModel AsmseqModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failure on the same thread.
 */
const char *asmseq_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *asmseq_version(void);

/**
 * Load a model file. On success `*out` owns a handle to release with
 * [`asmseq_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a writable pointer.
 */
enum AsmseqStatus asmseq_model_load(const char *path, struct AsmseqModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from [`asmseq_model_load`] not yet freed.
 */
void asmseq_model_free(struct AsmseqModel *model);

/**
 * Number of states in the model vocabulary; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t asmseq_model_num_states(const struct AsmseqModel *model);

/**
 * Transition weight of the model.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum AsmseqStatus asmseq_model_w_seq(const struct AsmseqModel *model, double *out);

/**
 * Index of the empty assembly, or -1 when the vocabulary lacks it.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
int64_t asmseq_model_empty_state(const struct AsmseqModel *model);

/**
 * Copy the model's transition log-probabilities (`-inf` when unattested)
 * and allowed flags into `states * states` arrays indexed `from * states + to`.
 * Either output may be null.
 *
 * # Safety
 * Non-null outputs must hold `states * states` elements, where `states`
 * equals [`asmseq_model_num_states`].
 */
enum AsmseqStatus asmseq_model_transitions(const struct AsmseqModel *model,
                                           size_t states,
                                           double *out_log_prob,
                                           uint8_t *out_allowed);

/**
 * Semi-Markov Viterbi over raw arrays.
 *
 * `scores` is `frames x states`; `log_prob` and `allowed` are
 * `states x states` (`allowed` may be null for "all allowed"; `-inf` in
 * `log_prob` forbids a transition). `initial_state` is -1 for a free
 * start. `max_duration` of 0 means unbounded. Writes one state per frame
 * to `out_labels` and the optimal score to `out_score`. Returns
 * `Infeasible` when no labeling has finite score.
 *
 * # Safety
 * Every non-null pointer must reference the stated number of elements;
 * outputs must be writable.
 */
enum AsmseqStatus asmseq_segmental_viterbi(const double *scores,
                                           size_t frames,
                                           size_t states,
                                           const double *log_prob,
                                           const uint8_t *allowed,
                                           double w_seq,
                                           int64_t initial_state,
                                           size_t max_duration,
                                           uint32_t *out_labels,
                                           double *out_score);

/**
 * Viterbi with fixed segment boundaries. `segment_ends` lists the
 * exclusive end frame of each of `n_segments` segments in increasing
 * order; the last must equal `frames`. Other arguments as in
 * [`asmseq_segmental_viterbi`].
 *
 * # Safety
 * As for [`asmseq_segmental_viterbi`]; `segment_ends` must hold
 * `n_segments` elements.
 */
enum AsmseqStatus asmseq_viterbi_known_boundaries(const double *scores,
                                                  size_t frames,
                                                  size_t states,
                                                  const double *log_prob,
                                                  const uint8_t *allowed,
                                                  double w_seq,
                                                  int64_t initial_state,
                                                  const size_t *segment_ends,
                                                  size_t n_segments,
                                                  uint32_t *out_labels,
                                                  double *out_score);

/**
 * Segment-level edit score of two label sequences (runs collapsed).
 *
 * # Safety
 * `pred` and `truth` must hold `n_pred` and `n_truth` elements (either may
 * be null when its length is 0); `out` must be writable.
 */
enum AsmseqStatus asmseq_edit_score(const int32_t *pred,
                                    size_t n_pred,
                                    const int32_t *truth,
                                    size_t n_truth,
                                    double *out);

/**
 * Fraction of the `n` frames where `pred` equals `truth`.
 *
 * # Safety
 * `pred` and `truth` must hold `n` elements; `out` must be writable.
 */
enum AsmseqStatus asmseq_frame_accuracy(const int32_t *pred,
                                        const int32_t *truth,
                                        size_t n,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASMSEQ_H */
