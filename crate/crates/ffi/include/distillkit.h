#ifndef DISTILLKIT_H
#define DISTILLKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every exported function.
typedef enum DkStatus {
  DK_STATUS_OK = 0,
  DK_STATUS_NULL_POINTER = 1,
  DK_STATUS_INVALID_ARGUMENT = 2,
  DK_STATUS_CONFIG = 3,
  DK_STATUS_DATA = 4,
  DK_STATUS_FORMAT = 5,
  DK_STATUS_IO = 6,
  DK_STATUS_NUMERIC = 7,
  DK_STATUS_PANIC = 8,
} DkStatus;

// Opaque network handle.
typedef struct DkModel DkModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *dk_last_error(void);

// Builds a randomly initialized full-depth network. `family` is
// `"mobilenet_v2"`, `"micronet"` or `"micro:D:B:S"`.
//
// # Safety
// `family` must be a NUL-terminated string and `out` a valid pointer.
enum DkStatus dk_build_teacher(size_t num_classes,
                               const char *family,
                               uint64_t seed,
                               struct DkModel **out);

// Builds a randomly initialized student with the last `blocks_removed`
// inverted residuals of `teacher` dropped.
//
// # Safety
// `teacher` must be a live handle and `out` a valid pointer.
enum DkStatus dk_derive_student(const struct DkModel *teacher,
                                size_t blocks_removed,
                                uint64_t seed,
                                struct DkModel **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DkStatus dk_model_load(const char *path, struct DkModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum DkStatus dk_model_save(const struct DkModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void dk_model_free(struct DkModel *model);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum DkStatus dk_model_param_count(const struct DkModel *model, size_t *out);

// Writes `C, H, W` of a single input and the class count.
//
// # Safety
// `model` must be a live handle, `shape` must point to 3 writable values
// and `num_classes` to one.
enum DkStatus dk_model_shape(const struct DkModel *model, size_t *shape, size_t *num_classes);

// Inference-mode logits for `batch` images laid out `N×C×H×W`; `logits`
// receives `batch × num_classes` values.
//
// # Safety
// `input` must hold `batch·C·H·W` floats and `logits` room for
// `logits_len` floats.
enum DkStatus dk_model_forward(const struct DkModel *model,
                               const float *input,
                               size_t batch,
                               float *logits,
                               size_t logits_len);

// Mean cross-entropy of `n×k` logits against `n` labels.
//
// # Safety
// `logits` must hold `n·k` values and `labels` `n` values.
enum DkStatus dk_cross_entropy(const double *logits,
                               const size_t *labels,
                               size_t n,
                               size_t k,
                               double *out);

// Temperature-scaled distillation loss of `n×k` student logits against
// teacher logits, including the `T²` factor.
//
// # Safety
// `student` and `teacher` must each hold `n·k` values.
enum DkStatus dk_kd_loss(const double *student,
                         const double *teacher,
                         size_t n,
                         size_t k,
                         double temperature,
                         double *out);

// Integrated gradients of one `C×H×W` image against a zero baseline.
// `attributions` receives the signed `C×H×W` map. `log_prob` selects the
// log-probability as target score instead of the logit.
//
// # Safety
// `image` and `attributions` must each hold `C·H·W` values.
enum DkStatus dk_integrated_gradients(const struct DkModel *model,
                                      const float *image,
                                      size_t target,
                                      size_t steps,
                                      bool log_prob,
                                      double *attributions,
                                      size_t len);

// # Safety
// `out` must be a valid pointer.
enum DkStatus dk_compression_factor(size_t teacher_params, size_t student_params, double *out);

// Share of the teacher/baseline gap recovered by distillation, in percent.
//
// # Safety
// `out` must be a valid pointer.
enum DkStatus dk_relative_delta_acc(double teacher, double baseline, double distilled, double *out);

// Two-sided paired t-test of `a` against `b`.
//
// # Safety
// `a` and `b` must each hold `n` values; `t` and `p` must be valid.
enum DkStatus dk_paired_t_test(const double *a, const double *b, size_t n, double *t, double *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTILLKIT_H */
