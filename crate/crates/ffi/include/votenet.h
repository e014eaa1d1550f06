#ifndef VOTENET_H
#define VOTENET_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum VnStatus {
  VN_STATUS_OK = 0,
  VN_STATUS_NULL_POINTER = 1,
  VN_STATUS_INVALID_ARGUMENT = 2,
  VN_STATUS_IO = 3,
  VN_STATUS_CHECKPOINT = 4,
  VN_STATUS_RUNTIME = 5,
  VN_STATUS_PANIC = 6,
} VnStatus;

/**
 * Opaque model handle.
 */
typedef struct VnModel VnModel;

/**
 * Opaque labelled raster handle.
 */
typedef struct VnRaster VnRaster;

/**
 * Accuracy and F1 in percent, BER in `[0, 1]`.
 */
typedef struct VnMetrics {
  double accuracy;
  double ber;
  double f1;
} VnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *vn_last_error_message(void);

void vn_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vn_version(void);

/**
 * Creates a freshly initialised model for `size×size` windows with
 * `segments` segment slices. `size` must be a multiple of 8.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum VnStatus vn_model_new(uint32_t segments, uint32_t size, uint64_t seed, struct VnModel **out);

/**
 * Loads a checkpoint written by `votenet train` or [`vn_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VnStatus vn_model_load(const char *path, struct VnModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum VnStatus vn_model_save(const struct VnModel *model, const char *path);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void vn_model_free(struct VnModel *model);

/**
 * Window size of the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t vn_model_window(const struct VnModel *model);

/**
 * Sliding-window prediction over an `height×width×3` image with the given
 * stride. Writes `height×width×2` averaged probabilities to `out_probs`.
 *
 * # Safety
 * `image` must point to `image_len` doubles and `out_probs` to `out_len`
 * writable doubles.
 */
enum VnStatus vn_model_predict(const struct VnModel *model,
                               const double *image,
                               size_t image_len,
                               uint32_t height,
                               uint32_t width,
                               uint32_t stride,
                               double *out_probs,
                               size_t out_len);

/**
 * Reads `<stem>.image.png`, `<stem>.mask.png` and, if present, `<stem>.ids.png`.
 *
 * # Safety
 * `stem` must be NUL-terminated; `out` must be writable.
 */
enum VnStatus vn_raster_read(const char *stem, struct VnRaster **out);

/**
 * Generates a synthetic scene with the default field layout.
 *
 * # Safety
 * `out` must be writable.
 */
enum VnStatus vn_raster_generate(uint64_t seed,
                                 uint32_t height,
                                 uint32_t width,
                                 struct VnRaster **out);

/**
 * # Safety
 * `raster` must be null or a handle not yet freed.
 */
void vn_raster_free(struct VnRaster *raster);

/**
 * Writes height and width; either output may be null.
 *
 * # Safety
 * `raster` must be a live handle.
 */
enum VnStatus vn_raster_dims(const struct VnRaster *raster, uint32_t *height, uint32_t *width);

/**
 * Borrowed pointer to the `H×W×3` image; valid while the handle lives.
 *
 * # Safety
 * `raster` must be null or a live handle; `len` may be null.
 */
const double *vn_raster_image(const struct VnRaster *raster, size_t *len);

/**
 * Borrowed pointer to the `H×W` 0/1 mask; valid while the handle lives.
 *
 * # Safety
 * `raster` must be null or a live handle; `len` may be null.
 */
const uint8_t *vn_raster_mask(const struct VnRaster *raster, size_t *len);

/**
 * Accuracy, BER and F1 of binary predictions against ground truth.
 *
 * # Safety
 * `pred` and `truth` must each point to `len` bytes; `out` must be writable.
 */
enum VnStatus vn_metrics(const uint8_t *pred,
                         const uint8_t *truth,
                         size_t len,
                         struct VnMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOTENET_H */
