//! Detection evaluation: IoU-thresholded matching of predictions to ground
//! truth, per-document precision/recall/F, and macro-averaged dataset
//! reports with a stable JSON encoding.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{iou, BBox};
use crate::ingest::{Detection, ObjectClass, PageRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("detection references page \"{got}\" while evaluating page \"{expected}\"")]
    PageMismatch { expected: String, got: String },
    #[error("detection references unknown page \"{page_id}\"")]
    UnknownPageId { page_id: String },
    #[error("dataset holds no pages")]
    EmptyDataset,
}

/// How true/false positives are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricMode {
    /// Matched-box counts at the IoU threshold.
    #[default]
    CountBased,
    /// Overlap areas: per-prediction area covered by the ground-truth union
    /// for precision, per-ground-truth area covered by the prediction union
    /// for recall. No box matching is involved.
    AreaBased,
}

impl MetricMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricMode::CountBased => "count",
            MetricMode::AreaBased => "area",
        }
    }
}

/// How count-based matches are chosen among candidate pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchPolicy {
    /// Highest-IoU-first greedy assignment.
    #[default]
    Greedy,
    /// Maximum-cardinality assignment (augmenting paths).
    Exact,
}

impl MatchPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchPolicy::Greedy => "greedy",
            MatchPolicy::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub mode: MetricMode,
    pub matching: MatchPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5, mode: MetricMode::CountBased, matching: MatchPolicy::Greedy }
    }
}

/// Per-class scores for one document. Counts are carried as f64 so the
/// area-based mode can report fractional totals through the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_positive: f64,
    pub false_positive: f64,
    pub false_negative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DocumentReport {
    pub row: ClassReport,
    pub column: ClassReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    /// Keyed by page id; iteration order is the report order.
    pub per_document: BTreeMap<String, DocumentReport>,
    /// Field-wise means of the per-document row reports.
    pub row: ClassReport,
    /// Field-wise means of the per-document column reports.
    pub column: ClassReport,
    /// Mean of the row and column dataset F-measures.
    pub average_f: f64,
}

/// Matches predictions to ground truth at the IoU threshold. Each box is
/// used at most once. Greedy policy: candidate pairs ordered by IoU
/// descending (ties by ground-truth index, then prediction index) are taken
/// while both sides are free. Exact policy: a maximum-cardinality
/// assignment. Pairs come back in ground-truth index order.
pub fn match_detections(
    gt: &[BBox],
    preds: &[BBox],
    iou_threshold: f64,
    policy: MatchPolicy,
) -> Vec<(usize, usize, f64)> {
    let mut pairs = match policy {
        MatchPolicy::Greedy => {
            let mut candidates = Vec::new();
            for (gi, g) in gt.iter().enumerate() {
                for (pi, p) in preds.iter().enumerate() {
                    let v = iou(g, p);
                    if v >= iou_threshold {
                        candidates.push((gi, pi, v));
                    }
                }
            }
            candidates.sort_by(|a, b| {
                b.2.partial_cmp(&a.2)
                    .expect("IoU is finite")
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            let mut gt_used = vec![false; gt.len()];
            let mut pred_used = vec![false; preds.len()];
            let mut taken = Vec::new();
            for (gi, pi, v) in candidates {
                if !gt_used[gi] && !pred_used[pi] {
                    gt_used[gi] = true;
                    pred_used[pi] = true;
                    taken.push((gi, pi, v));
                }
            }
            taken
        }
        MatchPolicy::Exact => {
            let adjacency: Vec<Vec<usize>> = gt
                .iter()
                .map(|g| {
                    preds
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| iou(g, p) >= iou_threshold)
                        .map(|(pi, _)| pi)
                        .collect()
                })
                .collect();
            let mut pred_owner: Vec<Option<usize>> = vec![None; preds.len()];
            for gi in 0..gt.len() {
                let mut visited = vec![false; preds.len()];
                augment(gi, &adjacency, &mut pred_owner, &mut visited);
            }
            pred_owner
                .iter()
                .enumerate()
                .filter_map(|(pi, owner)| owner.map(|gi| (gi, pi, iou(&gt[gi], &preds[pi]))))
                .collect()
        }
    };
    pairs.sort_by_key(|&(gi, pi, _)| (gi, pi));
    pairs
}

fn augment(
    gi: usize,
    adjacency: &[Vec<usize>],
    pred_owner: &mut Vec<Option<usize>>,
    visited: &mut Vec<bool>,
) -> bool {
    for &pi in &adjacency[gi] {
        if visited[pi] {
            continue;
        }
        visited[pi] = true;
        let free = match pred_owner[pi] {
            None => true,
            Some(owner) => augment(owner, adjacency, pred_owner, visited),
        };
        if free {
            pred_owner[pi] = Some(gi);
            return true;
        }
    }
    false
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// 0/0 counts as 0 throughout; an exactly empty problem (no ground truth and
/// no predictions) counts as a perfect (1, 1, 1) instead.
fn scores(tp: f64, fp: f64, fn_: f64) -> (f64, f64, f64) {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    (precision, recall, f_measure(precision, recall))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn box_area(b: &BBox) -> f64 {
    (b.x_max - b.x_min).max(0.0) * (b.y_max - b.y_min).max(0.0)
}

fn intersect(a: &BBox, b: &BBox) -> Option<BBox> {
    let x_min = a.x_min.max(b.x_min);
    let y_min = a.y_min.max(b.y_min);
    let x_max = a.x_max.min(b.x_max);
    let y_max = a.y_max.min(b.y_max);
    (x_min < x_max && y_min < y_max).then(|| BBox::new(x_min, y_min, x_max, y_max))
}

/// Total area covered by a set of possibly overlapping rectangles, by
/// x-sweep over slab boundaries with y-interval merging per slab.
fn union_area(rects: &[BBox]) -> f64 {
    let rects: Vec<&BBox> = rects.iter().filter(|r| box_area(r) > 0.0).collect();
    if rects.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.x_min, r.x_max]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("coordinates are finite"));
    xs.dedup();
    let mut total = 0.0;
    for slab in xs.windows(2) {
        let (x0, x1) = (slab[0], slab[1]);
        if x1 <= x0 {
            continue;
        }
        let mut intervals: Vec<(f64, f64)> = rects
            .iter()
            .filter(|r| r.x_min <= x0 && r.x_max >= x1)
            .map(|r| (r.y_min, r.y_max))
            .collect();
        intervals.sort_by(|a, b| a.partial_cmp(b).expect("coordinates are finite"));
        let mut covered = 0.0;
        let mut current: Option<(f64, f64)> = None;
        for (lo, hi) in intervals {
            match current {
                Some((clo, chi)) if lo <= chi => current = Some((clo, chi.max(hi))),
                Some((clo, chi)) => {
                    covered += chi - clo;
                    current = Some((lo, hi));
                }
                None => current = Some((lo, hi)),
            }
        }
        if let Some((clo, chi)) = current {
            covered += chi - clo;
        }
        total += (x1 - x0) * covered;
    }
    total
}

/// Area of `b` covered by the union of `others`.
fn covered_area(b: &BBox, others: &[BBox]) -> f64 {
    let clipped: Vec<BBox> = others.iter().filter_map(|o| intersect(b, o)).collect();
    union_area(&clipped)
}

/// Scores one class of one document.
pub fn evaluate_class(gt: &[BBox], preds: &[BBox], config: &EvalConfig) -> ClassReport {
    if gt.is_empty() && preds.is_empty() {
        return ClassReport {
            precision: 1.0,
            recall: 1.0,
            f_measure: 1.0,
            ..ClassReport::default()
        };
    }
    let (tp, fp, fn_) = match config.mode {
        MetricMode::CountBased => {
            let matched = match_detections(gt, preds, config.iou_threshold, config.matching).len();
            (
                matched as f64,
                (preds.len() - matched) as f64,
                (gt.len() - matched) as f64,
            )
        }
        MetricMode::AreaBased => {
            let pred_total: f64 = preds.iter().map(box_area).sum();
            let gt_total: f64 = gt.iter().map(box_area).sum();
            let tp: f64 = preds.iter().map(|p| covered_area(p, gt)).sum();
            let gt_covered: f64 = gt.iter().map(|g| covered_area(g, preds)).sum();
            (tp, pred_total - tp, gt_total - gt_covered)
        }
    };
    let (precision, recall, f_measure) = match config.mode {
        MetricMode::CountBased => scores(tp, fp, fn_),
        MetricMode::AreaBased => {
            // Recall is the covered share of ground-truth area; precision is
            // the covered share of predicted area. tp is measured on the
            // prediction side, so recall is derived from fn_, not tp.
            let gt_total: f64 = gt.iter().map(box_area).sum();
            let precision = ratio(tp, tp + fp);
            let recall = ratio(gt_total - fn_, gt_total);
            (precision, recall, f_measure(precision, recall))
        }
    };
    ClassReport { precision, recall, f_measure, true_positive: tp, false_positive: fp, false_negative: fn_ }
}

/// Scores one document: rows against row detections, columns against column
/// detections. Every detection must carry the page's id.
pub fn evaluate_document(
    page: &PageRecord,
    detections: &[Detection],
    config: &EvalConfig,
) -> Result<DocumentReport, EvalError> {
    for det in detections {
        if det.page_id != page.page_id {
            return Err(EvalError::PageMismatch {
                expected: page.page_id.clone(),
                got: det.page_id.clone(),
            });
        }
    }
    let class_boxes = |class: ObjectClass| -> Vec<BBox> {
        detections.iter().filter(|d| d.class == class).map(|d| d.bbox).collect()
    };
    Ok(DocumentReport {
        row: evaluate_class(&page.rows, &class_boxes(ObjectClass::Row), config),
        column: evaluate_class(&page.columns, &class_boxes(ObjectClass::Column), config),
    })
}

/// Scores a dataset document by document and macro-averages the results.
/// Pages with no detections still count (their predictions are empty).
/// Detections naming a page absent from `pages` are an error, as is an
/// empty page list.
pub fn evaluate_dataset(
    pages: &[PageRecord],
    detections: &[Detection],
    config: &EvalConfig,
) -> Result<DatasetReport, EvalError> {
    if pages.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut by_page: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
    for det in detections {
        by_page.entry(det.page_id.as_str()).or_default().push(det);
    }
    for page_id in by_page.keys() {
        if !pages.iter().any(|p| p.page_id == *page_id) {
            return Err(EvalError::UnknownPageId { page_id: page_id.to_string() });
        }
    }
    let reports: Vec<(String, DocumentReport)> = pages
        .par_iter()
        .map(|page| {
            let dets: Vec<Detection> = by_page
                .get(page.page_id.as_str())
                .map(|v| v.iter().map(|d| (*d).clone()).collect())
                .unwrap_or_default();
            evaluate_document(page, &dets, config).map(|r| (page.page_id.clone(), r))
        })
        .collect::<Result<_, _>>()?;
    let per_document: BTreeMap<String, DocumentReport> = reports.into_iter().collect();
    let row = mean_report(per_document.values().map(|d| &d.row));
    let column = mean_report(per_document.values().map(|d| &d.column));
    let average_f = (row.f_measure + column.f_measure) / 2.0;
    Ok(DatasetReport { per_document, row, column, average_f })
}

fn mean_report<'a>(reports: impl Iterator<Item = &'a ClassReport>) -> ClassReport {
    let mut sum = ClassReport::default();
    let mut n = 0usize;
    for r in reports {
        sum.precision += r.precision;
        sum.recall += r.recall;
        sum.f_measure += r.f_measure;
        sum.true_positive += r.true_positive;
        sum.false_positive += r.false_positive;
        sum.false_negative += r.false_negative;
        n += 1;
    }
    if n == 0 {
        return sum;
    }
    let n = n as f64;
    ClassReport {
        precision: sum.precision / n,
        recall: sum.recall / n,
        f_measure: sum.f_measure / n,
        true_positive: sum.true_positive / n,
        false_positive: sum.false_positive / n,
        false_negative: sum.false_negative / n,
    }
}

fn push_class(out: &mut String, indent: &str, name: &str, r: &ClassReport, trailing_comma: bool) {
    out.push_str(&format!(
        "{indent}\"{name}\": {{\"precision\": {:.6}, \"recall\": {:.6}, \"f_measure\": {:.6}, \
         \"true_positive\": {:.6}, \"false_positive\": {:.6}, \"false_negative\": {:.6}}}{}\n",
        r.precision,
        r.recall,
        r.f_measure,
        r.true_positive,
        r.false_positive,
        r.false_negative,
        if trailing_comma { "," } else { "" },
    ));
}

/// Stable JSON encoding of a dataset report. All reals carry six decimals;
/// documents appear in page-id order. The output is byte-identical for
/// equal inputs.
pub fn report_to_json(report: &DatasetReport, config: &EvalConfig) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!(
        "  \"config\": {{\"iou_threshold\": {:.6}, \"mode\": \"{}\", \"matching\": \"{}\"}},\n",
        config.iou_threshold,
        config.mode.as_str(),
        config.matching.as_str(),
    ));
    out.push_str("  \"per_document\": {\n");
    let n_docs = report.per_document.len();
    for (i, (page_id, doc)) in report.per_document.iter().enumerate() {
        out.push_str(&format!("    {}: {{\n", serde_json::to_string(page_id).expect("string encodes")));
        push_class(&mut out, "      ", "row", &doc.row, true);
        push_class(&mut out, "      ", "column", &doc.column, false);
        out.push_str(if i + 1 < n_docs { "    },\n" } else { "    }\n" });
    }
    out.push_str("  },\n");
    out.push_str("  \"dataset\": {\n");
    push_class(&mut out, "    ", "row", &report.row, true);
    push_class(&mut out, "    ", "column", &report.column, true);
    out.push_str(&format!("    \"average_f\": {:.6}\n", report.average_f));
    out.push_str("  }\n");
    out.push_str("}\n");
    out
}
