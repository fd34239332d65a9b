#ifndef XDT_H
#define XDT_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum XdtStatus {
  XDT_STATUS_OK = 0,
  XDT_STATUS_NULL_POINTER = 1,
  XDT_STATUS_INVALID_ARGUMENT = 2,
  XDT_STATUS_VALIDATION = 3,
  XDT_STATUS_FORMAT = 4,
  XDT_STATUS_PARSE = 5,
  XDT_STATUS_CONFIG = 6,
  XDT_STATUS_GEOMETRY = 7,
  XDT_STATUS_SHAPE = 8,
  XDT_STATUS_ENCODE = 9,
  XDT_STATUS_IO = 10,
  XDT_STATUS_JSON = 11,
  XDT_STATUS_BUFFER_TOO_SMALL = 12,
  XDT_STATUS_PANIC = 13,
} XdtStatus;

typedef enum XdtInterpolation {
  XDT_INTERPOLATION_NEAREST = 0,
  XDT_INTERPOLATION_BILINEAR = 1,
} XdtInterpolation;

typedef enum XdtNormalization {
  XDT_NORMALIZATION_RAY_SUM = 0,
  XDT_NORMALIZATION_MEAN = 1,
} XdtNormalization;

typedef enum XdtApInterpolation {
  XDT_AP_INTERPOLATION_ALL_POINT = 0,
  XDT_AP_INTERPOLATION_ELEVEN_POINT = 1,
} XdtApInterpolation;

/**
 * One projection image per view.
 */
typedef struct XdtImageSet XdtImageSet;

/**
 * Projection angles and detector geometry.
 */
typedef struct XdtViews XdtViews;

/**
 * A multi-channel voxel grid.
 */
typedef struct XdtVolume XdtVolume;

typedef struct XdtProjectorConfig {
  enum XdtInterpolation interpolation;
  enum XdtNormalization normalization;
  /**
   * Sampling step in mm; zero selects the smallest in-plane voxel spacing.
   */
  double ray_step;
} XdtProjectorConfig;

/**
 * A projection box in detector (x, z) coordinates. A NaN score means unscored.
 */
typedef struct XdtBox2 {
  double x1;
  double z1;
  double x2;
  double z2;
  double score;
} XdtBox2;

/**
 * A volume box in world coordinates. A NaN score means unscored.
 */
typedef struct XdtBox3 {
  double x1;
  double y1;
  double z1;
  double x2;
  double y2;
  double z2;
  double score;
} XdtBox3;

typedef struct XdtAnchor2 {
  double center[2];
  double size[2];
} XdtAnchor2;

typedef struct XdtAnchor3 {
  double center[3];
  double size[3];
} XdtAnchor3;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *xdt_last_error_message(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void xdt_string_free(char *s);

/**
 * Creates a volume from `channels * nx * ny * nz` samples ordered channel, z, y, x.
 *
 * # Safety
 * `dims`, `spacing` and `origin` point to 3 values; `data` to `len` values.
 */
enum XdtStatus xdt_volume_new(const size_t *dims,
                              const double *spacing,
                              const double *origin,
                              size_t channels,
                              const float *data,
                              size_t len,
                              struct XdtVolume **out);

/**
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum XdtStatus xdt_volume_read(const char *path, struct XdtVolume **out);

/**
 * # Safety
 * `volume` is a live handle; `path` is a NUL-terminated string.
 */
enum XdtStatus xdt_volume_write(const struct XdtVolume *volume, const char *path);

/**
 * Writes the grid size to `dims[3]` and the channel count to `channels`.
 *
 * # Safety
 * `volume` is a live handle; `dims` has room for 3 values.
 */
enum XdtStatus xdt_volume_shape(const struct XdtVolume *volume, size_t *dims, size_t *channels);

/**
 * Borrows the sample buffer; valid while the handle lives.
 *
 * # Safety
 * `volume` is a live handle; `data` and `len` are writable.
 */
enum XdtStatus xdt_volume_data(const struct XdtVolume *volume, const float **data, size_t *len);

/**
 * # Safety
 * `volume` is null or a handle that has not been freed.
 */
void xdt_volume_free(struct XdtVolume *volume);

/**
 * Creates a view set rotating about `center = (x, y, z)`, or about the
 * origin when `center` is null.
 *
 * # Safety
 * `angles` points to `n` values, `detector_dims` and `detector_spacing` to 2,
 * `center` to 3 or is null.
 */
enum XdtStatus xdt_views_new(const double *angles,
                             size_t n,
                             const size_t *detector_dims,
                             const double *detector_spacing,
                             const double *center,
                             struct XdtViews **out);

/**
 * # Safety
 * `views` is a live handle.
 */
size_t xdt_views_len(const struct XdtViews *views);

/**
 * # Safety
 * `views` is null or a handle that has not been freed.
 */
void xdt_views_free(struct XdtViews *views);

/**
 * Creates one image per view from `channels * nu * nv` samples per view,
 * concatenated in view order, each ordered channel, v, u.
 *
 * # Safety
 * `views` is a live handle; `data` points to `len` values.
 */
enum XdtStatus xdt_image_set_new(const struct XdtViews *views,
                                 size_t channels,
                                 const float *data,
                                 size_t len,
                                 struct XdtImageSet **out);

/**
 * # Safety
 * `set` is a live handle.
 */
size_t xdt_image_set_len(const struct XdtImageSet *set);

/**
 * Writes `(nu, nv)` to `dims[2]` and the channel count to `channels`.
 *
 * # Safety
 * `set` is a live handle; `dims` has room for 2 values.
 */
enum XdtStatus xdt_image_set_shape(const struct XdtImageSet *set,
                                   size_t index,
                                   size_t *dims,
                                   size_t *channels);

/**
 * Borrows the samples of image `index`; valid while the handle lives.
 *
 * # Safety
 * `set` is a live handle; `data` and `len` are writable.
 */
enum XdtStatus xdt_image_set_data(const struct XdtImageSet *set,
                                  size_t index,
                                  const float **data,
                                  size_t *len);

/**
 * # Safety
 * `set` is a live handle; `path` is a NUL-terminated string.
 */
enum XdtStatus xdt_image_set_write(const struct XdtImageSet *set, size_t index, const char *path);

/**
 * # Safety
 * `set` is null or a handle that has not been freed.
 */
void xdt_image_set_free(struct XdtImageSet *set);

/**
 * Bilinear ray sums at the default step.
 */
struct XdtProjectorConfig xdt_projector_config_default(void);

/**
 * Forward projection of every channel of `volume`. A null `cfg` uses the defaults.
 *
 * # Safety
 * Handles are live; `cfg` is null or valid; `out` is writable.
 */
enum XdtStatus xdt_forward_project(const struct XdtVolume *volume,
                                   const struct XdtViews *views,
                                   const struct XdtProjectorConfig *cfg,
                                   struct XdtImageSet **out);

/**
 * Transpose of [`xdt_forward_project`] onto the grid of `like`.
 *
 * # Safety
 * Handles are live; `cfg` is null or valid; `out` is writable.
 */
enum XdtStatus xdt_back_project(const struct XdtImageSet *images,
                                const struct XdtViews *views,
                                const struct XdtVolume *like,
                                const struct XdtProjectorConfig *cfg,
                                struct XdtVolume **out);

/**
 * Projection of `volume` restricted to the binary `mask`.
 *
 * # Safety
 * Handles are live; `cfg` is null or valid; `out` is writable.
 */
enum XdtStatus xdt_dissect_project(const struct XdtVolume *volume,
                                   const struct XdtVolume *mask,
                                   const struct XdtViews *views,
                                   const struct XdtProjectorConfig *cfg,
                                   struct XdtImageSet **out);

/**
 * # Safety
 * All pointers are valid.
 */
enum XdtStatus xdt_iou2(const struct XdtBox2 *a, const struct XdtBox2 *b, double *out);

/**
 * # Safety
 * All pointers are valid.
 */
enum XdtStatus xdt_iou3(const struct XdtBox3 *a, const struct XdtBox3 *b, double *out);

/**
 * Bounds of the projection of `b` at `theta` degrees about `(cx, cy)`.
 *
 * # Safety
 * All pointers are valid.
 */
enum XdtStatus xdt_project_box3(const struct XdtBox3 *b,
                                double theta,
                                double cx,
                                double cy,
                                struct XdtBox2 *out);

/**
 * Writes the 4 regression offsets of `b` relative to `anchor` to `t`.
 *
 * # Safety
 * All pointers are valid; `t` has room for 4 values.
 */
enum XdtStatus xdt_encode_box2(const struct XdtBox2 *b, const struct XdtAnchor2 *anchor, double *t);

/**
 * # Safety
 * All pointers are valid; `t` points to 4 values.
 */
enum XdtStatus xdt_decode_box2(const double *t,
                               const struct XdtAnchor2 *anchor,
                               struct XdtBox2 *out);

/**
 * Writes the 6 regression offsets of `b` relative to `anchor` to `t`.
 *
 * # Safety
 * All pointers are valid; `t` has room for 6 values.
 */
enum XdtStatus xdt_encode_box3(const struct XdtBox3 *b, const struct XdtAnchor3 *anchor, double *t);

/**
 * # Safety
 * All pointers are valid; `t` points to 6 values.
 */
enum XdtStatus xdt_decode_box3(const double *t,
                               const struct XdtAnchor3 *anchor,
                               struct XdtBox3 *out);

/**
 * Fuses 2D and 3D detections. Inputs use the JSON-lines box format; the
 * result is the match outcome as a JSON document, released with
 * [`xdt_string_free`].
 *
 * # Safety
 * String arguments are NUL-terminated; `views` is a live handle; `out` is writable.
 */
enum XdtStatus xdt_collaborate_json(const char *boxes3_jsonl,
                                    const char *boxes2_jsonl,
                                    const struct XdtViews *views,
                                    double threshold,
                                    char **out);

/**
 * Fuses 2D and 3D detections without strings.
 *
 * `views_of[j]` is the view index of `boxes2[j]`. On success:
 * - `kept[i]` is 1 when 3D box `i` heads a group and 0 otherwise (`n3` entries);
 * - `q[i * K + k]` is the index, among the view-`k` boxes in input order, of
 *   the 2D box matched to 3D box `i`, or -1 (`n3 * K` entries);
 * - `fused` and `fused_views` receive the fused 2D boxes and their views:
 *   group boxes in group order, then unmatched 2D boxes. Their capacity is
 *   `capacity`; the number written goes to `fused_len`. When the capacity is
 *   too small the call fails with `BufferTooSmall` and `fused_len` holds the
 *   required count. `n3 * K + n2` is always enough.
 *
 * # Safety
 * Array pointers are valid for the stated lengths; `views` is a live handle.
 */
enum XdtStatus xdt_collaborate(const struct XdtBox3 *boxes3,
                               size_t n3,
                               const struct XdtBox2 *boxes2,
                               const size_t *views_of,
                               size_t n2,
                               const struct XdtViews *views,
                               double threshold,
                               uint8_t *kept,
                               int64_t *q,
                               struct XdtBox2 *fused,
                               size_t *fused_views,
                               size_t capacity,
                               size_t *fused_len);

/**
 * Average precision of scored 2D detections against ground-truth boxes.
 *
 * # Safety
 * Array pointers are valid for the stated lengths; `out` is writable.
 */
enum XdtStatus xdt_average_precision2(const struct XdtBox2 *dets,
                                      size_t n_det,
                                      const struct XdtBox2 *gts,
                                      size_t n_gt,
                                      double iou_thresh,
                                      enum XdtApInterpolation interpolation,
                                      double *out);

/**
 * Average precision of scored 3D detections against ground-truth boxes.
 *
 * # Safety
 * Array pointers are valid for the stated lengths; `out` is writable.
 */
enum XdtStatus xdt_average_precision3(const struct XdtBox3 *dets,
                                      size_t n_det,
                                      const struct XdtBox3 *gts,
                                      size_t n_gt,
                                      double iou_thresh,
                                      enum XdtApInterpolation interpolation,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XDT_H */
