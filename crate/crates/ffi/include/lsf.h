#ifndef LSF_H
#define LSF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call. The nonzero values 1 to 4 match the
 * exit codes of the `lsf` command-line tool.
 */
typedef enum LsfStatus {
  LSF_STATUS_OK = 0,
  LSF_STATUS_FAILED = 1,
  LSF_STATUS_INVARIANT = 2,
  LSF_STATUS_BUDGET_EXHAUSTED = 3,
  LSF_STATUS_BAD_INPUT = 4,
  LSF_STATUS_NULL_POINTER = 5,
  LSF_STATUS_PANIC = 6,
} LsfStatus;

/**
 * Stage at which an attack ended.
 */
typedef enum LsfOutcome {
  LSF_OUTCOME_SUCCESS = 0,
  LSF_OUTCOME_BUDGET_EXHAUSTED = 1,
  LSF_OUTCOME_STAGE_FAILED = 2,
} LsfOutcome;

/**
 * Attack result handle.
 */
typedef struct LsfAttack LsfAttack;

/**
 * Toy classifier handle.
 */
typedef struct LsfClassifier LsfClassifier;

/**
 * Video tensor handle.
 */
typedef struct LsfVideo LsfVideo;

/**
 * Summary of a finished attack. `success_stage` and `final_label` are
 * `-1` when not applicable.
 */
typedef struct LsfAttackSummary {
  enum LsfOutcome outcome;
  int32_t success_stage;
  uint64_t q1;
  uint64_t q2;
  uint64_t q3;
  int64_t final_label;
  double final_score;
} LsfAttackSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lsf_last_error(void);

/**
 * Copies `t*h*w*c` floats in `(t, h, w, c)` order into a new video.
 * Values must lie in `[0, 1]`.
 *
 * # Safety
 * `data` must point to `len` readable floats; `out` must be writable.
 */
enum LsfStatus lsf_video_new(size_t t,
                             size_t h,
                             size_t w,
                             size_t c,
                             const float *data,
                             size_t len,
                             struct LsfVideo **out);

/**
 * Reads an LSFV1 file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsfStatus lsf_video_read(const char *path, struct LsfVideo **out);

/**
 * Writes an LSFV1 file.
 *
 * # Safety
 * `video` must be a live handle and `path` a NUL-terminated string.
 */
enum LsfStatus lsf_video_write(const struct LsfVideo *video, const char *path);

/**
 * Writes `[t, h, w, c]` into `dims`.
 *
 * # Safety
 * `video` must be a live handle; `dims` must point to 4 writable values.
 */
enum LsfStatus lsf_video_dims(const struct LsfVideo *video, size_t *dims);

/**
 * Borrowed pointer to the samples and their count. Valid while the
 * handle lives.
 *
 * # Safety
 * `video` must be a live handle; `data` and `len` must be writable.
 */
enum LsfStatus lsf_video_data(const struct LsfVideo *video, const float **data, size_t *len);

/**
 * # Safety
 * `video` must be null or a handle not yet freed.
 */
void lsf_video_free(struct LsfVideo *video);

/**
 * Loads an LSFC1 checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsfStatus lsf_classifier_load(const char *path, struct LsfClassifier **out);

/**
 * Generates the synthetic dataset from `data_seed` and trains a
 * classifier on it. `held_out_accuracy` may be null.
 *
 * # Safety
 * `out` must be writable; `held_out_accuracy` null or writable.
 */
enum LsfStatus lsf_classifier_train(uint64_t data_seed,
                                    size_t per_class,
                                    size_t epochs,
                                    double lr,
                                    uint64_t train_seed,
                                    struct LsfClassifier **out,
                                    double *held_out_accuracy);

/**
 * Saves an LSFC1 checkpoint.
 *
 * # Safety
 * `classifier` must be a live handle and `path` a NUL-terminated string.
 */
enum LsfStatus lsf_classifier_save(const struct LsfClassifier *classifier, const char *path);

/**
 * Top-1 label and softmax score. No query budget is involved.
 *
 * # Safety
 * Handles must be live; `label` and `score` must be writable.
 */
enum LsfStatus lsf_classifier_top1(const struct LsfClassifier *classifier,
                                   const struct LsfVideo *video,
                                   size_t *label,
                                   double *score);

/**
 * # Safety
 * `classifier` must be null or a handle not yet freed.
 */
void lsf_classifier_free(struct LsfClassifier *classifier);

/**
 * Fills `out` (row-major, `n * n` entries) with the orthonormal DCT-II
 * matrix of order `n`.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum LsfStatus lsf_dct_matrix(size_t n, double *out, size_t len);

/**
 * Runs the three-stage attack on `video` (true label `label`). `config`
 * holds `key = value` lines and may be null for defaults. Logos are the
 * synthesized letter set drawn from `logo_seed`. A finished attack returns
 * `Ok` whatever its outcome; read it with [`lsf_attack_summary`].
 *
 * # Safety
 * Handles must be live; `config` null or NUL-terminated; `out` writable.
 */
enum LsfStatus lsf_attack_run(const struct LsfClassifier *classifier,
                              const struct LsfVideo *video,
                              size_t label,
                              const char *config,
                              uint64_t logo_seed,
                              struct LsfAttack **out);

/**
 * # Safety
 * `attack` must be a live handle; `out` must be writable.
 */
enum LsfStatus lsf_attack_summary(const struct LsfAttack *attack, struct LsfAttackSummary *out);

/**
 * New handle holding a copy of the adversarial video. Fails with
 * `BadInput` when the attack produced none.
 *
 * # Safety
 * `attack` must be a live handle; `out` must be writable.
 */
enum LsfStatus lsf_attack_adversarial(const struct LsfAttack *attack, struct LsfVideo **out);

/**
 * Writes the JSON-lines trace.
 *
 * # Safety
 * `attack` must be a live handle and `path` a NUL-terminated string.
 */
enum LsfStatus lsf_attack_write_trace(const struct LsfAttack *attack, const char *path);

/**
 * # Safety
 * `attack` must be null or a handle not yet freed.
 */
void lsf_attack_free(struct LsfAttack *attack);

/**
 * Temporal inconsistency (mean warping error) of an RGB video.
 *
 * # Safety
 * `video` must be a live handle; `ti` must be writable.
 */
enum LsfStatus lsf_warping_error(const struct LsfVideo *video, double *ti);

/**
 * Occluded area in percent of the frame for a logo of `logo_h x logo_w`
 * scaled by `k` on a `frame_h x frame_w` frame.
 */
double lsf_aoa(double k, size_t logo_h, size_t logo_w, size_t frame_h, size_t frame_w);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSF_H */
