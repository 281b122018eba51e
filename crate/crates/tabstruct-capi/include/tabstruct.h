/* C interface to the tabstruct table structure toolkit. */

#ifndef TABSTRUCT_H
#define TABSTRUCT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * The call succeeded.
 */
#define TS_OK 0

/**
 * A required pointer argument was null.
 */
#define TS_ERR_NULL_ARG -1

/**
 * A string argument was not valid UTF-8.
 */
#define TS_ERR_UTF8 -2

/**
 * Input text failed to parse; the message carries source and line.
 */
#define TS_ERR_PARSE -3

/**
 * The input parsed but holds no usable records.
 */
#define TS_ERR_EMPTY -4

/**
 * An argument value is outside its documented domain.
 */
#define TS_ERR_INVALID -5

/**
 * A set of anchor shapes. Opaque; release with [`ts_anchors_free`].
 */
typedef struct TsAnchorSet TsAnchorSet;

/**
 * Parsed ground-truth pages. Opaque; release with [`ts_dataset_free`].
 */
typedef struct TsDataset TsDataset;

/**
 * Knobs for [`ts_refine_row_box`]; get defaults from
 * [`ts_refine_params_default`].
 */
typedef struct TsRefineParams {
  /**
   * A pixel is ink when its intensity is strictly below this.
   */
  uint8_t intensity_threshold;
  /**
   * Minimum ink pixels for a probe strip to qualify.
   */
  uint32_t black_pixel_threshold;
  /**
   * Probe strip width in columns.
   */
  uint32_t probe_width;
  /**
   * Nonzero scans outward from the box edges with a blank-run budget;
   * zero scans the full page width.
   */
  int32_t gap_limited;
  /**
   * Consecutive blank columns that end a gap-limited scan.
   */
  uint32_t gap_limit;
} TsRefineParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failing call on this thread, as a
 * NUL-terminated string. The pointer stays valid until the next failing
 * call on the same thread; it is empty when nothing has failed yet.
 * Never free it.
 */
const char *ts_last_error_message(void);

/**
 * IoU of two boxes given as `[x_min, y_min, x_max, y_max]`.
 *
 * # Safety
 * `a` and `b` must point to four readable doubles each; `out` must be
 * writable.
 */
int32_t ts_box_iou(const double *a, const double *b, double *out);

/**
 * IoU of two co-centered rectangles given by their dimensions.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t ts_shape_iou(double a_width, double a_height, double b_width, double b_height, double *out);

/**
 * Clustering distance between two shapes: `1 - shape IoU`.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t ts_shape_distance(double a_width,
                          double a_height,
                          double b_width,
                          double b_height,
                          double *out);

/**
 * Parses pages JSONL text into a dataset handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable. On
 * success `*out` owns the dataset until passed to [`ts_dataset_free`].
 */
int32_t ts_dataset_parse_jsonl(const char *text, struct TsDataset **out);

/**
 * Number of pages in the dataset.
 *
 * # Safety
 * `dataset` must come from [`ts_dataset_parse_jsonl`]; `out` must be
 * writable.
 */
int32_t ts_dataset_page_count(const struct TsDataset *dataset, size_t *out);

/**
 * Width/height samples of one class across the dataset, interleaved as
 * `w0,h0,w1,h1,...`. Class 0 selects rows, 1 selects columns. Call once
 * with `out_wh` null to learn the shape count in `*out_len`, then again
 * with a buffer of capacity `2 * count` doubles.
 *
 * # Safety
 * `dataset` must come from [`ts_dataset_parse_jsonl`]; `out_len` must be
 * writable; a non-null `out_wh` must hold `2 * capacity` writable doubles.
 */
int32_t ts_dataset_shape_samples(const struct TsDataset *dataset,
                                 int32_t class_,
                                 double *out_wh,
                                 size_t capacity,
                                 size_t *out_len);

/**
 * Releases a dataset handle. Null is a no-op.
 *
 * # Safety
 * `dataset` must come from [`ts_dataset_parse_jsonl`] and not have been
 * freed already.
 */
void ts_dataset_free(struct TsDataset *dataset);

/**
 * Builds the traditional scale x ratio anchor grid.
 *
 * # Safety
 * `scales` and `ratios` must hold `n_scales` / `n_ratios` readable
 * doubles; `out` must be writable. On success `*out` owns the set until
 * passed to [`ts_anchors_free`].
 */
int32_t ts_anchors_traditional(const double *scales,
                               size_t n_scales,
                               const double *ratios,
                               size_t n_ratios,
                               struct TsAnchorSet **out);

/**
 * Runs IoU k-means from `init`, producing an optimized set. `samples_wh`
 * is interleaved `w0,h0,...` of `n_samples` shapes; `k` is taken from the
 * init set's size.
 *
 * # Safety
 * `samples_wh` must hold `2 * n_samples` readable doubles; `init` must
 * come from an anchor constructor; `out` must be writable. On success
 * `*out` owns the set until passed to [`ts_anchors_free`].
 */
int32_t ts_anchors_optimize(const double *samples_wh,
                            size_t n_samples,
                            const struct TsAnchorSet *init,
                            uint32_t max_iterations,
                            struct TsAnchorSet **out);

/**
 * Number of shapes in the set.
 *
 * # Safety
 * `set` must come from an anchor constructor; `out` must be writable.
 */
int32_t ts_anchors_len(const struct TsAnchorSet *set, size_t *out);

/**
 * Iterations the optimizer ran to produce this set; 0 for traditional
 * grids.
 *
 * # Safety
 * `set` must come from an anchor constructor; `out` must be writable.
 */
int32_t ts_anchors_iterations(const struct TsAnchorSet *set, uint32_t *out);

/**
 * Copies the set's shapes into `out_wh`, interleaved `w0,h0,...`. Call
 * once with `out_wh` null to learn the count in `*out_len`, then again
 * with a buffer of capacity `2 * count` doubles.
 *
 * # Safety
 * `set` must come from an anchor constructor; `out_len` must be writable;
 * a non-null `out_wh` must hold `2 * capacity` writable doubles.
 */
int32_t ts_anchors_shapes(const struct TsAnchorSet *set,
                          double *out_wh,
                          size_t capacity,
                          size_t *out_len);

/**
 * Releases an anchor set handle. Null is a no-op.
 *
 * # Safety
 * `set` must come from an anchor constructor and not have been freed
 * already.
 */
void ts_anchors_free(struct TsAnchorSet *set);

/**
 * Mean over samples of the best shape IoU against the set: the coverage
 * statistic anchor optimization maximizes.
 *
 * # Safety
 * `samples_wh` must hold `2 * n_samples` readable doubles; `set` must
 * come from an anchor constructor; `out` must be writable.
 */
int32_t ts_mean_best_iou(const double *samples_wh,
                         size_t n_samples,
                         const struct TsAnchorSet *set,
                         double *out);

/**
 * Fills `out` with the default refinement parameters.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t ts_refine_params_default(struct TsRefineParams *out);

/**
 * Snaps a row box's x-extent to the ink of a grayscale page, in place.
 * `pixels` is row-major, `width * height` bytes; `box_io` is
 * `[x_min, y_min, x_max, y_max]` and is updated on success.
 *
 * # Safety
 * `pixels` must hold `width * height` readable bytes; `box_io` must hold
 * four readable and writable doubles; `params` must be readable.
 */
int32_t ts_refine_row_box(const uint8_t *pixels,
                          uint32_t width,
                          uint32_t height,
                          double *box_io,
                          const struct TsRefineParams *params);

/**
 * Evaluates detections against ground truth, both as JSONL text, and
 * returns the JSON report. `area_based` nonzero scores by literal overlap
 * areas instead of matched-box counts. On success `*out_json` owns a
 * NUL-terminated report; release it with [`ts_string_free`].
 *
 * # Safety
 * `gt_jsonl` and `preds_jsonl` must be NUL-terminated strings; `out_json`
 * must be writable.
 */
int32_t ts_evaluate_jsonl(const char *gt_jsonl,
                          const char *preds_jsonl,
                          double iou_threshold,
                          int32_t area_based,
                          char **out_json);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `text` must come from a `ts_` function that documents this release path
 * and not have been freed already.
 */
void ts_string_free(char *text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TABSTRUCT_H */
