//! C ABI over the core library. Every function returns a status code from
//! the `TS_*` family; `0` is success and negative values classify the
//! failure, with a human-readable message retrievable per thread through
//! [`ts_last_error_message`]. Handles (`TsDataset`, `TsAnchorSet`) are
//! opaque and must be released with their matching `_free` function.
//! Pointers are never retained past the call that receives them.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use tabstruct::anchors::{
    extract_shape_samples, generate_traditional_anchors, kmeans_optimize, mean_best_iou,
    AnchorError, AnchorSet, AnchorSpec, KMeansParams,
};
use tabstruct::eval::{evaluate_dataset, report_to_json, EvalConfig, EvalError, MetricMode};
use tabstruct::geometry::{iou, shape_distance, shape_iou, BBox, Shape};
use tabstruct::ingest::{
    parse_detections_jsonl, parse_pages_jsonl, Dataset, GrayImage, IngestError, ObjectClass,
};
use tabstruct::refine::{binarize, refine_row_box, RefineMode, RefineParams};

/// The call succeeded.
pub const TS_OK: i32 = 0;
/// A required pointer argument was null.
pub const TS_ERR_NULL_ARG: i32 = -1;
/// A string argument was not valid UTF-8.
pub const TS_ERR_UTF8: i32 = -2;
/// Input text failed to parse; the message carries source and line.
pub const TS_ERR_PARSE: i32 = -3;
/// The input parsed but holds no usable records.
pub const TS_ERR_EMPTY: i32 = -4;
/// An argument value is outside its documented domain.
pub const TS_ERR_INVALID: i32 = -5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(code: i32, msg: impl Into<String>) -> i32 {
    let text = msg.into().replace('\0', " ");
    let cstring = CString::new(text).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = cstring);
    code
}

/// Message for the most recent failing call on this thread, as a
/// NUL-terminated string. The pointer stays valid until the next failing
/// call on the same thread; it is empty when nothing has failed yet.
/// Never free it.
#[no_mangle]
pub extern "C" fn ts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Panics must not unwind across the ABI; they become TS_ERR_INVALID.
fn guard(body: impl FnOnce() -> i32) -> i32 {
    catch_unwind(AssertUnwindSafe(body))
        .unwrap_or_else(|_| fail(TS_ERR_INVALID, "internal panic"))
}

fn anchor_failure(e: AnchorError) -> i32 {
    let code = match e {
        AnchorError::EmptySampleSet => TS_ERR_EMPTY,
        AnchorError::MalformedJson(_) => TS_ERR_PARSE,
        _ => TS_ERR_INVALID,
    };
    fail(code, e.to_string())
}

fn ingest_failure(e: IngestError) -> i32 {
    fail(TS_ERR_PARSE, e.to_string())
}

unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, i32> {
    if ptr.is_null() {
        return Err(fail(TS_ERR_NULL_ARG, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(TS_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

unsafe fn box_arg(ptr: *const f64, what: &str) -> Result<BBox, i32> {
    if ptr.is_null() {
        return Err(fail(TS_ERR_NULL_ARG, format!("{what} is null")));
    }
    let c = slice::from_raw_parts(ptr, 4);
    if c.iter().any(|v| !v.is_finite()) {
        return Err(fail(TS_ERR_INVALID, format!("{what} holds a non-finite coordinate")));
    }
    if c[2] < c[0] || c[3] < c[1] {
        return Err(fail(TS_ERR_INVALID, format!("{what} is inverted")));
    }
    Ok(BBox::new(c[0], c[1], c[2], c[3]))
}

fn shape_arg(width: f64, height: f64, what: &str) -> Result<Shape, i32> {
    if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
        return Err(fail(
            TS_ERR_INVALID,
            format!("{what} must have positive finite dimensions, got {width} x {height}"),
        ));
    }
    Ok(Shape::new(width, height))
}

/// Interleaved `w0,h0,w1,h1,...` buffer of `count` shapes.
unsafe fn shapes_arg(ptr: *const f64, count: usize, what: &str) -> Result<Vec<Shape>, i32> {
    if ptr.is_null() {
        return Err(fail(TS_ERR_NULL_ARG, format!("{what} is null")));
    }
    let raw = slice::from_raw_parts(ptr, count * 2);
    raw.chunks_exact(2).map(|p| shape_arg(p[0], p[1], what)).collect()
}

unsafe fn out_arg<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, i32> {
    if ptr.is_null() {
        return Err(fail(TS_ERR_NULL_ARG, format!("{what} is null")));
    }
    Ok(&mut *ptr)
}

unsafe fn handle_arg<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, i32> {
    if ptr.is_null() {
        return Err(fail(TS_ERR_NULL_ARG, format!("{what} is null")));
    }
    Ok(&*ptr)
}

/// IoU of two boxes given as `[x_min, y_min, x_max, y_max]`.
///
/// # Safety
/// `a` and `b` must point to four readable doubles each; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ts_box_iou(a: *const f64, b: *const f64, out: *mut f64) -> i32 {
    guard(|| {
        let (a, b) = match (box_arg(a, "box a"), box_arg(b, "box b")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(c), _) | (_, Err(c)) => return c,
        };
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        *out = iou(&a, &b);
        TS_OK
    })
}

/// IoU of two co-centered rectangles given by their dimensions.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_shape_iou(
    a_width: f64,
    a_height: f64,
    b_width: f64,
    b_height: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let (a, b) = match (shape_arg(a_width, a_height, "shape a"), shape_arg(b_width, b_height, "shape b")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(c), _) | (_, Err(c)) => return c,
        };
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        *out = shape_iou(&a, &b);
        TS_OK
    })
}

/// Clustering distance between two shapes: `1 - shape IoU`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_shape_distance(
    a_width: f64,
    a_height: f64,
    b_width: f64,
    b_height: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let (a, b) = match (shape_arg(a_width, a_height, "shape a"), shape_arg(b_width, b_height, "shape b")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(c), _) | (_, Err(c)) => return c,
        };
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        *out = shape_distance(&a, &b);
        TS_OK
    })
}

/// Parsed ground-truth pages. Opaque; release with [`ts_dataset_free`].
pub struct TsDataset {
    inner: Dataset,
}

/// Parses pages JSONL text into a dataset handle.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable. On
/// success `*out` owns the dataset until passed to [`ts_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_parse_jsonl(
    text: *const c_char,
    out: *mut *mut TsDataset,
) -> i32 {
    guard(|| {
        let text = match utf8_arg(text, "text") {
            Ok(t) => t,
            Err(c) => return c,
        };
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        match parse_pages_jsonl(text, "jsonl") {
            Ok((dataset, _)) => {
                *out = Box::into_raw(Box::new(TsDataset { inner: dataset }));
                TS_OK
            }
            Err(e) => ingest_failure(e),
        }
    })
}

/// Number of pages in the dataset.
///
/// # Safety
/// `dataset` must come from [`ts_dataset_parse_jsonl`]; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_page_count(
    dataset: *const TsDataset,
    out: *mut usize,
) -> i32 {
    guard(|| {
        let ds = match handle_arg(dataset, "dataset") {
            Ok(d) => d,
            Err(c) => return c,
        };
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        *out = ds.inner.pages.len();
        TS_OK
    })
}

/// Width/height samples of one class across the dataset, interleaved as
/// `w0,h0,w1,h1,...`. Class 0 selects rows, 1 selects columns. Call once
/// with `out_wh` null to learn the shape count in `*out_len`, then again
/// with a buffer of capacity `2 * count` doubles.
///
/// # Safety
/// `dataset` must come from [`ts_dataset_parse_jsonl`]; `out_len` must be
/// writable; a non-null `out_wh` must hold `2 * capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_shape_samples(
    dataset: *const TsDataset,
    class: i32,
    out_wh: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        let ds = match handle_arg(dataset, "dataset") {
            Ok(d) => d,
            Err(c) => return c,
        };
        let out_len = match out_arg(out_len, "out_len") {
            Ok(o) => o,
            Err(c) => return c,
        };
        let class = match class {
            0 => ObjectClass::Row,
            1 => ObjectClass::Column,
            other => return fail(TS_ERR_INVALID, format!("class {other} is not 0 (row) or 1 (column)")),
        };
        let samples = match extract_shape_samples(&ds.inner, class) {
            Ok(s) => s,
            Err(e) => return anchor_failure(e),
        };
        *out_len = samples.shapes.len();
        if out_wh.is_null() {
            return TS_OK;
        }
        if capacity < samples.shapes.len() {
            return fail(
                TS_ERR_INVALID,
                format!("buffer capacity {capacity} < {} shapes", samples.shapes.len()),
            );
        }
        let buffer = slice::from_raw_parts_mut(out_wh, samples.shapes.len() * 2);
        for (slot, shape) in buffer.chunks_exact_mut(2).zip(&samples.shapes) {
            slot[0] = shape.width;
            slot[1] = shape.height;
        }
        TS_OK
    })
}

/// Releases a dataset handle. Null is a no-op.
///
/// # Safety
/// `dataset` must come from [`ts_dataset_parse_jsonl`] and not have been
/// freed already.
#[no_mangle]
pub unsafe extern "C" fn ts_dataset_free(dataset: *mut TsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// A set of anchor shapes. Opaque; release with [`ts_anchors_free`].
pub struct TsAnchorSet {
    inner: AnchorSet,
}

/// Builds the traditional scale x ratio anchor grid.
///
/// # Safety
/// `scales` and `ratios` must hold `n_scales` / `n_ratios` readable
/// doubles; `out` must be writable. On success `*out` owns the set until
/// passed to [`ts_anchors_free`].
#[no_mangle]
pub unsafe extern "C" fn ts_anchors_traditional(
    scales: *const f64,
    n_scales: usize,
    ratios: *const f64,
    n_ratios: usize,
    out: *mut *mut TsAnchorSet,
) -> i32 {
    guard(|| {
        if scales.is_null() || ratios.is_null() {
            return fail(TS_ERR_NULL_ARG, "scales/ratios is null");
        }
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        let spec = AnchorSpec {
            scales: slice::from_raw_parts(scales, n_scales).to_vec(),
            ratios: slice::from_raw_parts(ratios, n_ratios).to_vec(),
        };
        match generate_traditional_anchors(&spec) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(TsAnchorSet { inner: set }));
                TS_OK
            }
            Err(e) => anchor_failure(e),
        }
    })
}

/// Runs IoU k-means from `init`, producing an optimized set. `samples_wh`
/// is interleaved `w0,h0,...` of `n_samples` shapes; `k` is taken from the
/// init set's size.
///
/// # Safety
/// `samples_wh` must hold `2 * n_samples` readable doubles; `init` must
/// come from an anchor constructor; `out` must be writable. On success
/// `*out` owns the set until passed to [`ts_anchors_free`].
#[no_mangle]
pub unsafe extern "C" fn ts_anchors_optimize(
    samples_wh: *const f64,
    n_samples: usize,
    init: *const TsAnchorSet,
    max_iterations: u32,
    out: *mut *mut TsAnchorSet,
) -> i32 {
    guard(|| {
        let samples = match shapes_arg(samples_wh, n_samples, "samples_wh") {
            Ok(s) => s,
            Err(c) => return c,
        };
        let init = match handle_arg(init, "init") {
            Ok(i) => i,
            Err(c) => return c,
        };
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        if samples.is_empty() {
            return fail(TS_ERR_EMPTY, "samples_wh holds no shapes");
        }
        let params = KMeansParams {
            max_iterations,
            ..KMeansParams::new(init.inner.shapes.len())
        };
        match kmeans_optimize(&samples, &init.inner, &params) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(TsAnchorSet { inner: set }));
                TS_OK
            }
            Err(e) => anchor_failure(e),
        }
    })
}

/// Number of shapes in the set.
///
/// # Safety
/// `set` must come from an anchor constructor; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_anchors_len(set: *const TsAnchorSet, out: *mut usize) -> i32 {
    guard(|| {
        let set = match handle_arg(set, "set") {
            Ok(s) => s,
            Err(c) => return c,
        };
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        *out = set.inner.shapes.len();
        TS_OK
    })
}

/// Iterations the optimizer ran to produce this set; 0 for traditional
/// grids.
///
/// # Safety
/// `set` must come from an anchor constructor; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_anchors_iterations(set: *const TsAnchorSet, out: *mut u32) -> i32 {
    guard(|| {
        let set = match handle_arg(set, "set") {
            Ok(s) => s,
            Err(c) => return c,
        };
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        *out = set.inner.iterations_run;
        TS_OK
    })
}

/// Copies the set's shapes into `out_wh`, interleaved `w0,h0,...`. Call
/// once with `out_wh` null to learn the count in `*out_len`, then again
/// with a buffer of capacity `2 * count` doubles.
///
/// # Safety
/// `set` must come from an anchor constructor; `out_len` must be writable;
/// a non-null `out_wh` must hold `2 * capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_anchors_shapes(
    set: *const TsAnchorSet,
    out_wh: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        let set = match handle_arg(set, "set") {
            Ok(s) => s,
            Err(c) => return c,
        };
        let out_len = match out_arg(out_len, "out_len") {
            Ok(o) => o,
            Err(c) => return c,
        };
        *out_len = set.inner.shapes.len();
        if out_wh.is_null() {
            return TS_OK;
        }
        if capacity < set.inner.shapes.len() {
            return fail(
                TS_ERR_INVALID,
                format!("buffer capacity {capacity} < {} shapes", set.inner.shapes.len()),
            );
        }
        let buffer = slice::from_raw_parts_mut(out_wh, set.inner.shapes.len() * 2);
        for (slot, shape) in buffer.chunks_exact_mut(2).zip(&set.inner.shapes) {
            slot[0] = shape.width;
            slot[1] = shape.height;
        }
        TS_OK
    })
}

/// Releases an anchor set handle. Null is a no-op.
///
/// # Safety
/// `set` must come from an anchor constructor and not have been freed
/// already.
#[no_mangle]
pub unsafe extern "C" fn ts_anchors_free(set: *mut TsAnchorSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Mean over samples of the best shape IoU against the set: the coverage
/// statistic anchor optimization maximizes.
///
/// # Safety
/// `samples_wh` must hold `2 * n_samples` readable doubles; `set` must
/// come from an anchor constructor; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_mean_best_iou(
    samples_wh: *const f64,
    n_samples: usize,
    set: *const TsAnchorSet,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let samples = match shapes_arg(samples_wh, n_samples, "samples_wh") {
            Ok(s) => s,
            Err(c) => return c,
        };
        let set = match handle_arg(set, "set") {
            Ok(s) => s,
            Err(c) => return c,
        };
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        if samples.is_empty() {
            return fail(TS_ERR_EMPTY, "samples_wh holds no shapes");
        }
        *out = mean_best_iou(&samples, &set.inner);
        TS_OK
    })
}

/// Knobs for [`ts_refine_row_box`]; get defaults from
/// [`ts_refine_params_default`].
#[repr(C)]
pub struct TsRefineParams {
    /// A pixel is ink when its intensity is strictly below this.
    pub intensity_threshold: u8,
    /// Minimum ink pixels for a probe strip to qualify.
    pub black_pixel_threshold: u32,
    /// Probe strip width in columns.
    pub probe_width: u32,
    /// Nonzero scans outward from the box edges with a blank-run budget;
    /// zero scans the full page width.
    pub gap_limited: i32,
    /// Consecutive blank columns that end a gap-limited scan.
    pub gap_limit: u32,
}

/// Fills `out` with the default refinement parameters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_refine_params_default(out: *mut TsRefineParams) -> i32 {
    guard(|| {
        let out = match out_arg(out, "out") {
            Ok(o) => o,
            Err(c) => return c,
        };
        let d = RefineParams::default();
        *out = TsRefineParams {
            intensity_threshold: d.intensity_threshold,
            black_pixel_threshold: d.black_pixel_threshold,
            probe_width: d.probe_width,
            gap_limited: matches!(d.mode, RefineMode::GapLimited) as i32,
            gap_limit: d.gap_limit,
        };
        TS_OK
    })
}

/// Snaps a row box's x-extent to the ink of a grayscale page, in place.
/// `pixels` is row-major, `width * height` bytes; `box_io` is
/// `[x_min, y_min, x_max, y_max]` and is updated on success.
///
/// # Safety
/// `pixels` must hold `width * height` readable bytes; `box_io` must hold
/// four readable and writable doubles; `params` must be readable.
#[no_mangle]
pub unsafe extern "C" fn ts_refine_row_box(
    pixels: *const u8,
    width: u32,
    height: u32,
    box_io: *mut f64,
    params: *const TsRefineParams,
) -> i32 {
    guard(|| {
        if pixels.is_null() {
            return fail(TS_ERR_NULL_ARG, "pixels is null");
        }
        let params = match handle_arg(params, "params") {
            Ok(p) => p,
            Err(c) => return c,
        };
        if width == 0 || height == 0 {
            return fail(TS_ERR_INVALID, format!("image is {width} x {height}"));
        }
        let n = width as usize * height as usize;
        let bbox = match box_arg(box_io, "box_io") {
            Ok(b) => b,
            Err(c) => return c,
        };
        let image = GrayImage {
            width,
            height,
            pixels: slice::from_raw_parts(pixels, n).to_vec(),
        };
        let rust_params = RefineParams {
            intensity_threshold: params.intensity_threshold,
            black_pixel_threshold: params.black_pixel_threshold,
            probe_width: params.probe_width,
            mode: if params.gap_limited != 0 {
                RefineMode::GapLimited
            } else {
                RefineMode::PaperFaithful
            },
            gap_limit: params.gap_limit,
            scan_clamp: None,
        };
        let bin = binarize(&image, rust_params.intensity_threshold);
        let refined = refine_row_box(&bin, &bbox, &rust_params);
        let out = slice::from_raw_parts_mut(box_io, 4);
        out[0] = refined.x_min;
        out[1] = refined.y_min;
        out[2] = refined.x_max;
        out[3] = refined.y_max;
        TS_OK
    })
}

/// Evaluates detections against ground truth, both as JSONL text, and
/// returns the JSON report. `area_based` nonzero scores by literal overlap
/// areas instead of matched-box counts. On success `*out_json` owns a
/// NUL-terminated report; release it with [`ts_string_free`].
///
/// # Safety
/// `gt_jsonl` and `preds_jsonl` must be NUL-terminated strings; `out_json`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_evaluate_jsonl(
    gt_jsonl: *const c_char,
    preds_jsonl: *const c_char,
    iou_threshold: f64,
    area_based: i32,
    out_json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let gt = match utf8_arg(gt_jsonl, "gt_jsonl") {
            Ok(t) => t,
            Err(c) => return c,
        };
        let preds = match utf8_arg(preds_jsonl, "preds_jsonl") {
            Ok(t) => t,
            Err(c) => return c,
        };
        let out_json = match out_arg(out_json, "out_json") {
            Ok(o) => o,
            Err(c) => return c,
        };
        if !(0.0..=1.0).contains(&iou_threshold) {
            return fail(TS_ERR_INVALID, format!("iou_threshold {iou_threshold} outside [0, 1]"));
        }
        let (dataset, _) = match parse_pages_jsonl(gt, "gt") {
            Ok(d) => d,
            Err(e) => return ingest_failure(e),
        };
        let detections = match parse_detections_jsonl(preds, "preds") {
            Ok(d) => d,
            Err(e) => return ingest_failure(e),
        };
        let config = EvalConfig {
            iou_threshold,
            mode: if area_based != 0 { MetricMode::AreaBased } else { MetricMode::CountBased },
            ..EvalConfig::default()
        };
        match evaluate_dataset(&dataset.pages, &detections, &config) {
            Ok(report) => {
                let json = report_to_json(&report, &config);
                let cstring = CString::new(json.replace('\0', " ")).unwrap_or_default();
                *out_json = cstring.into_raw();
                TS_OK
            }
            Err(EvalError::EmptyDataset) => {
                fail(TS_ERR_EMPTY, EvalError::EmptyDataset.to_string())
            }
            Err(e) => fail(TS_ERR_INVALID, e.to_string()),
        }
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `text` must come from a `ts_` function that documents this release path
/// and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ts_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}
