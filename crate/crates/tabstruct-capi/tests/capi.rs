//! Exercises the C ABI the way a foreign caller would: raw pointers,
//! status codes, two-call buffer sizing, and explicit frees.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use tabstruct_capi::*;

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(ts_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

fn parse_dataset(jsonl: &str) -> *mut TsDataset {
    let text = CString::new(jsonl).unwrap();
    let mut handle: *mut TsDataset = ptr::null_mut();
    let code = unsafe { ts_dataset_parse_jsonl(text.as_ptr(), &mut handle) };
    assert_eq!(code, TS_OK, "parse failed: {}", last_error());
    assert!(!handle.is_null());
    handle
}

const PAGES: &str = concat!(
    r#"{"page_id": "a", "width": 100, "height": 60, "rows": [[10, 10, 90, 20], [10, 30, 90, 40]], "columns": [[10, 10, 40, 40]]}"#,
    "\n",
    r#"{"page_id": "b", "width": 100, "height": 60, "rows": [[0, 0, 50, 5]], "columns": []}"#,
    "\n",
);

#[test]
fn box_iou_matches_hand_computed_values() {
    let a = [0.0, 0.0, 10.0, 10.0];
    let b = [5.0, 0.0, 15.0, 10.0];
    let mut out = f64::NAN;
    assert_eq!(unsafe { ts_box_iou(a.as_ptr(), b.as_ptr(), &mut out) }, TS_OK);
    assert!((out - 1.0 / 3.0).abs() < 1e-12);

    assert_eq!(unsafe { ts_box_iou(a.as_ptr(), a.as_ptr(), &mut out) }, TS_OK);
    assert_eq!(out, 1.0);

    let far = [50.0, 50.0, 60.0, 60.0];
    assert_eq!(unsafe { ts_box_iou(a.as_ptr(), far.as_ptr(), &mut out) }, TS_OK);
    assert_eq!(out, 0.0);
}

#[test]
fn box_iou_classifies_bad_arguments() {
    let a = [0.0, 0.0, 10.0, 10.0];
    let mut out = 0.0;

    let code = unsafe { ts_box_iou(ptr::null(), a.as_ptr(), &mut out) };
    assert_eq!(code, TS_ERR_NULL_ARG);
    assert!(last_error().contains("box a"));

    let inverted = [10.0, 0.0, 0.0, 10.0];
    let code = unsafe { ts_box_iou(a.as_ptr(), inverted.as_ptr(), &mut out) };
    assert_eq!(code, TS_ERR_INVALID);
    assert!(last_error().contains("inverted"));

    let nan = [0.0, 0.0, f64::NAN, 10.0];
    let code = unsafe { ts_box_iou(nan.as_ptr(), a.as_ptr(), &mut out) };
    assert_eq!(code, TS_ERR_INVALID);
    assert!(last_error().contains("non-finite"));

    let code = unsafe { ts_box_iou(a.as_ptr(), a.as_ptr(), ptr::null_mut()) };
    assert_eq!(code, TS_ERR_NULL_ARG);
}

#[test]
fn shape_distance_complements_shape_iou() {
    let mut iou = f64::NAN;
    assert_eq!(unsafe { ts_shape_iou(10.0, 10.0, 20.0, 20.0, &mut iou) }, TS_OK);
    assert!((iou - 0.25).abs() < 1e-12);

    let mut dist = f64::NAN;
    assert_eq!(unsafe { ts_shape_distance(10.0, 10.0, 20.0, 20.0, &mut dist) }, TS_OK);
    assert!((dist - 0.75).abs() < 1e-12);

    let code = unsafe { ts_shape_iou(0.0, 10.0, 20.0, 20.0, &mut iou) };
    assert_eq!(code, TS_ERR_INVALID);
    assert!(last_error().contains("positive finite"));
}

#[test]
fn dataset_parses_counts_and_serves_samples_in_two_calls() {
    let ds = parse_dataset(PAGES);

    let mut pages = 0usize;
    assert_eq!(unsafe { ts_dataset_page_count(ds, &mut pages) }, TS_OK);
    assert_eq!(pages, 2);

    let mut len = 0usize;
    let code = unsafe { ts_dataset_shape_samples(ds, 0, ptr::null_mut(), 0, &mut len) };
    assert_eq!(code, TS_OK);
    assert_eq!(len, 3);

    let mut buffer = vec![0.0f64; len * 2];
    let code = unsafe { ts_dataset_shape_samples(ds, 0, buffer.as_mut_ptr(), len, &mut len) };
    assert_eq!(code, TS_OK);
    assert_eq!(buffer, vec![80.0, 10.0, 80.0, 10.0, 50.0, 5.0]);

    let code = unsafe { ts_dataset_shape_samples(ds, 1, ptr::null_mut(), 0, &mut len) };
    assert_eq!(code, TS_OK);
    assert_eq!(len, 1);

    let mut short = [0.0f64; 2];
    let code = unsafe { ts_dataset_shape_samples(ds, 0, short.as_mut_ptr(), 1, &mut len) };
    assert_eq!(code, TS_ERR_INVALID);
    assert!(last_error().contains("capacity"));

    let code = unsafe { ts_dataset_shape_samples(ds, 2, ptr::null_mut(), 0, &mut len) };
    assert_eq!(code, TS_ERR_INVALID);
    assert!(last_error().contains("class"));

    unsafe { ts_dataset_free(ds) };
    unsafe { ts_dataset_free(ptr::null_mut()) };
}

#[test]
fn dataset_parse_failure_names_the_line() {
    let text = CString::new(format!("{}not json\n", PAGES.lines().next().unwrap().to_owned() + "\n")).unwrap();
    let mut handle: *mut TsDataset = ptr::null_mut();
    let code = unsafe { ts_dataset_parse_jsonl(text.as_ptr(), &mut handle) };
    assert_eq!(code, TS_ERR_PARSE);
    assert!(handle.is_null());
    assert!(last_error().contains("jsonl:2"), "message was: {}", last_error());
}

#[test]
fn invalid_utf8_text_is_rejected() {
    let bytes: [c_char; 3] = [-1i8 as c_char, -2i8 as c_char, 0];
    let mut handle: *mut TsDataset = ptr::null_mut();
    let code = unsafe { ts_dataset_parse_jsonl(bytes.as_ptr(), &mut handle) };
    assert_eq!(code, TS_ERR_UTF8);
    assert!(last_error().contains("UTF-8"));
}

#[test]
fn traditional_grid_sizes_and_optimization_improves_coverage() {
    let scales = [16.0, 32.0, 64.0, 128.0, 256.0];
    let ratios = [0.5, 1.0, 2.0];
    let mut grid: *mut TsAnchorSet = ptr::null_mut();
    let code = unsafe {
        ts_anchors_traditional(scales.as_ptr(), scales.len(), ratios.as_ptr(), ratios.len(), &mut grid)
    };
    assert_eq!(code, TS_OK);
    let mut len = 0usize;
    assert_eq!(unsafe { ts_anchors_len(grid, &mut len) }, TS_OK);
    assert_eq!(len, 15);
    let mut iters = 99u32;
    assert_eq!(unsafe { ts_anchors_iterations(grid, &mut iters) }, TS_OK);
    assert_eq!(iters, 0);
    unsafe { ts_anchors_free(grid) };

    // Two tight clusters far from the square init grid: one k-means pass
    // must lift coverage.
    let mut samples = Vec::new();
    for i in 0..10 {
        let jitter = i as f64;
        samples.extend_from_slice(&[300.0 + jitter, 12.0 + jitter * 0.1]);
        samples.extend_from_slice(&[14.0 + jitter * 0.1, 280.0 + jitter]);
    }
    let n = samples.len() / 2;

    let init_scales = [16.0, 32.0];
    let init_ratios = [1.0];
    let mut init: *mut TsAnchorSet = ptr::null_mut();
    let code = unsafe {
        ts_anchors_traditional(init_scales.as_ptr(), 2, init_ratios.as_ptr(), 1, &mut init)
    };
    assert_eq!(code, TS_OK);

    let mut before = f64::NAN;
    assert_eq!(unsafe { ts_mean_best_iou(samples.as_ptr(), n, init, &mut before) }, TS_OK);

    let mut optimized: *mut TsAnchorSet = ptr::null_mut();
    let code = unsafe { ts_anchors_optimize(samples.as_ptr(), n, init, 300, &mut optimized) };
    assert_eq!(code, TS_OK, "optimize failed: {}", last_error());

    let mut after = f64::NAN;
    assert_eq!(unsafe { ts_mean_best_iou(samples.as_ptr(), n, optimized, &mut after) }, TS_OK);
    assert!(after > before + 0.2, "coverage {before:.4} -> {after:.4}");

    assert_eq!(unsafe { ts_anchors_iterations(optimized, &mut iters) }, TS_OK);
    assert!(iters >= 1);

    let mut k = 0usize;
    assert_eq!(unsafe { ts_anchors_shapes(optimized, ptr::null_mut(), 0, &mut k) }, TS_OK);
    assert_eq!(k, 2);
    let mut shapes = vec![0.0f64; 4];
    assert_eq!(unsafe { ts_anchors_shapes(optimized, shapes.as_mut_ptr(), 2, &mut k) }, TS_OK);
    assert!(shapes.iter().all(|v| v.is_finite() && *v > 0.0));

    let code = unsafe { ts_anchors_optimize(samples.as_ptr(), 0, init, 300, &mut optimized) };
    assert_eq!(code, TS_ERR_EMPTY);

    unsafe { ts_anchors_free(optimized) };
    unsafe { ts_anchors_free(init) };
}

#[test]
fn refine_snaps_a_row_box_to_the_ink_stroke() {
    let mut params = TsRefineParams {
        intensity_threshold: 0,
        black_pixel_threshold: 0,
        probe_width: 0,
        gap_limited: 1,
        gap_limit: 0,
    };
    assert_eq!(unsafe { ts_refine_params_default(&mut params) }, TS_OK);
    assert_eq!(params.intensity_threshold, 128);
    assert_eq!(params.black_pixel_threshold, 2);
    assert_eq!(params.probe_width, 1);
    assert_eq!(params.gap_limited, 0);
    assert_eq!(params.gap_limit, 50);

    let (width, height) = (40u32, 20u32);
    let mut pixels = vec![255u8; (width * height) as usize];
    for y in 5..8 {
        for x in 10..15 {
            pixels[(y * width + x) as usize] = 0;
        }
    }

    let mut bbox = [2.0, 4.0, 30.0, 9.0];
    let code = unsafe { ts_refine_row_box(pixels.as_ptr(), width, height, bbox.as_mut_ptr(), &params) };
    assert_eq!(code, TS_OK, "refine failed: {}", last_error());
    assert_eq!(bbox, [10.0, 4.0, 15.0, 9.0]);

    // A blank page leaves the box untouched.
    let blank = vec![255u8; (width * height) as usize];
    let mut kept = [2.0, 4.0, 30.0, 9.0];
    let code = unsafe { ts_refine_row_box(blank.as_ptr(), width, height, kept.as_mut_ptr(), &params) };
    assert_eq!(code, TS_OK);
    assert_eq!(kept, [2.0, 4.0, 30.0, 9.0]);

    let code = unsafe { ts_refine_row_box(pixels.as_ptr(), 0, height, bbox.as_mut_ptr(), &params) };
    assert_eq!(code, TS_ERR_INVALID);
    let code = unsafe { ts_refine_row_box(ptr::null(), width, height, bbox.as_mut_ptr(), &params) };
    assert_eq!(code, TS_ERR_NULL_ARG);
}

#[test]
fn evaluate_returns_a_parseable_report() {
    let preds = concat!(
        r#"{"page_id": "a", "class": "row", "box": [10, 10, 90, 20], "score": 0.9}"#,
        "\n",
        r#"{"page_id": "a", "class": "row", "box": [10, 30, 90, 40], "score": 0.9}"#,
        "\n",
        r#"{"page_id": "a", "class": "column", "box": [10, 10, 40, 40], "score": 0.9}"#,
        "\n",
        r#"{"page_id": "b", "class": "row", "box": [0, 0, 50, 5], "score": 0.9}"#,
        "\n",
    );
    let gt = CString::new(PAGES).unwrap();
    let preds = CString::new(preds).unwrap();

    let mut out: *mut c_char = ptr::null_mut();
    let code = unsafe { ts_evaluate_jsonl(gt.as_ptr(), preds.as_ptr(), 0.5, 0, &mut out) };
    assert_eq!(code, TS_OK, "evaluate failed: {}", last_error());
    assert!(!out.is_null());

    let json = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { ts_string_free(out) };
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["dataset"]["average_f"], 1.0);
    assert!(report["per_document"].get("a").is_some());
    assert!(report["per_document"].get("b").is_some());

    let mut out: *mut c_char = ptr::null_mut();
    let code = unsafe { ts_evaluate_jsonl(gt.as_ptr(), preds.as_ptr(), 1.5, 0, &mut out) };
    assert_eq!(code, TS_ERR_INVALID);
    assert!(last_error().contains("[0, 1]"));

    let empty = CString::new("").unwrap();
    let code = unsafe { ts_evaluate_jsonl(empty.as_ptr(), preds.as_ptr(), 0.5, 0, &mut out) };
    assert_eq!(code, TS_ERR_EMPTY);

    unsafe { ts_string_free(ptr::null_mut()) };
}

#[test]
fn last_error_message_starts_empty_and_survives_reads() {
    assert_eq!(last_error(), "");
    let mut out = 0.0;
    let code = unsafe { ts_box_iou(ptr::null(), ptr::null(), &mut out) };
    assert_eq!(code, TS_ERR_NULL_ARG);
    let first = last_error();
    assert!(!first.is_empty());
    assert_eq!(last_error(), first);
}

#[test]
fn generated_header_exports_the_full_surface() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/tabstruct.h");
    let header = std::fs::read_to_string(path).expect("header is generated by build.rs");
    assert!(header.contains("#ifndef TABSTRUCT_H"));
    assert!(header.contains("#define TS_ERR_PARSE -3"));
    assert!(header.contains("typedef struct TsDataset TsDataset;"));
    assert!(header.contains("typedef struct TsAnchorSet TsAnchorSet;"));
    for symbol in [
        "ts_last_error_message",
        "ts_box_iou",
        "ts_shape_iou",
        "ts_shape_distance",
        "ts_dataset_parse_jsonl",
        "ts_dataset_page_count",
        "ts_dataset_shape_samples",
        "ts_dataset_free",
        "ts_anchors_traditional",
        "ts_anchors_optimize",
        "ts_anchors_len",
        "ts_anchors_iterations",
        "ts_anchors_shapes",
        "ts_anchors_free",
        "ts_mean_best_iou",
        "ts_refine_params_default",
        "ts_refine_row_box",
        "ts_evaluate_jsonl",
        "ts_string_free",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}
