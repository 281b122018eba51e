//! Anchor generation: the traditional scale/ratio cross product and
//! dimension clustering of ground-truth shapes under the 1 - IoU metric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{shape_distance, shape_iou, Shape};
use crate::ingest::{Dataset, ObjectClass};

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("empty sample set: no positive-area boxes of the requested class")]
    EmptySampleSet,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("k ({k}) exceeds the sample count ({samples})")]
    KExceedsSamples { k: usize, samples: usize },
    #[error("init provides {got} shapes but k is {expected}")]
    InitMismatch { expected: usize, got: usize },
    #[error("invalid anchor spec: {0}")]
    InvalidSpec(String),
    #[error("malformed anchor JSON: {0}")]
    MalformedJson(String),
}

/// Scale/ratio grid for traditional anchor generation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Traditional,
    Optimized,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Traditional => "traditional",
            Self::Optimized => "optimized",
        }
    }
}

/// A set of anchor dimensions plus how it was produced. `iterations_run` is
/// 0 for traditional sets and the number of Lloyd iterations otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub shapes: Vec<Shape>,
    pub provenance: Provenance,
    pub iterations_run: u32,
}

/// Centroid update rule. `Mean` is the default; `Medoid` restricts centroids
/// to cluster members (useful for comparing against mean drift).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CentroidUpdate {
    #[default]
    Mean,
    Medoid,
}

#[derive(Debug, Clone)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iterations: u32,
    /// Reserved for randomized init strategies; Lloyd iteration itself is
    /// deterministic and never draws from it.
    pub seed: u64,
    /// Stop once the mean best distance improves by less than this.
    pub min_improvement: f64,
    pub update: CentroidUpdate,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        Self { k, max_iterations: 300, seed: 0, min_improvement: 1e-9, update: CentroidUpdate::Mean }
    }
}

/// Shape samples pulled from ground truth, plus how many zero-area boxes
/// were skipped on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleExtraction {
    pub shapes: Vec<Shape>,
    pub skipped_zero_area: usize,
}

/// Collects one `Shape` per positive-area ground-truth box of `class`,
/// in dataset order.
pub fn extract_shape_samples(
    dataset: &Dataset,
    class: ObjectClass,
) -> Result<SampleExtraction, AnchorError> {
    let mut shapes = Vec::new();
    let mut skipped = 0usize;
    for page in &dataset.pages {
        let boxes = match class {
            ObjectClass::Row => &page.rows,
            ObjectClass::Column => &page.columns,
        };
        for b in boxes {
            if b.width() > 0.0 && b.height() > 0.0 {
                shapes.push(Shape::new(b.width(), b.height()));
            } else {
                skipped += 1;
            }
        }
    }
    if shapes.is_empty() {
        return Err(AnchorError::EmptySampleSet);
    }
    Ok(SampleExtraction { shapes, skipped_zero_area: skipped })
}

/// Traditional anchors: for every scale s and ratio r (scales outer, ratios
/// inner), width = s * sqrt(r) and height = s / sqrt(r), so the area is s^2
/// and the aspect ratio is r.
pub fn generate_traditional_anchors(spec: &AnchorSpec) -> Result<AnchorSet, AnchorError> {
    if spec.scales.is_empty() || spec.ratios.is_empty() {
        return Err(AnchorError::InvalidSpec("scales and ratios must be non-empty".into()));
    }
    for &v in spec.scales.iter().chain(&spec.ratios) {
        if !v.is_finite() || v <= 0.0 {
            return Err(AnchorError::InvalidSpec(format!(
                "scales and ratios must be positive and finite, got {v}"
            )));
        }
    }
    let mut shapes = Vec::with_capacity(spec.scales.len() * spec.ratios.len());
    for &s in &spec.scales {
        for &r in &spec.ratios {
            let root = r.sqrt();
            shapes.push(Shape::new(s * root, s / root));
        }
    }
    Ok(AnchorSet { shapes, provenance: Provenance::Traditional, iterations_run: 0 })
}

/// Inverse of the traditional construction: scale = sqrt(w * h),
/// ratio = w / h.
pub fn decompose_anchor(shape: &Shape) -> (f64, f64) {
    ((shape.width * shape.height).sqrt(), shape.width / shape.height)
}

/// Mean over samples of the best (largest) concentric IoU against any
/// anchor in the set.
pub fn mean_best_iou(samples: &[Shape], anchors: &AnchorSet) -> f64 {
    if samples.is_empty() || anchors.shapes.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            anchors
                .shapes
                .iter()
                .map(|a| shape_iou(s, a))
                .fold(0.0f64, f64::max)
        })
        .sum();
    total / samples.len() as f64
}

/// Assigns each sample to its nearest centroid (ties break to the lowest
/// centroid index) and returns the mean of the per-sample best distances.
fn assign(samples: &[Shape], centroids: &[Shape]) -> (Vec<usize>, f64) {
    let mut assignment = Vec::with_capacity(samples.len());
    let mut total = 0.0f64;
    for s in samples {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, c) in centroids.iter().enumerate() {
            let d = shape_distance(s, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        assignment.push(best);
        total += best_d;
    }
    (assignment, total / samples.len() as f64)
}

fn mean_min_distance(samples: &[Shape], centroids: &[Shape]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| centroids.iter().map(|c| shape_distance(s, c)).fold(f64::INFINITY, f64::min))
        .sum();
    total / samples.len() as f64
}

fn update_centroids(
    samples: &[Shape],
    assignment: &[usize],
    old_centroids: &[Shape],
    update: CentroidUpdate,
) -> Vec<Shape> {
    let k = old_centroids.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        members[c].push(i);
    }
    let mut centroids = Vec::with_capacity(k);
    for (c, member_ids) in members.iter().enumerate() {
        if member_ids.is_empty() {
            centroids.push(old_centroids[c]); // placeholder, reseeded below
            continue;
        }
        let centroid = match update {
            CentroidUpdate::Mean => {
                let n = member_ids.len() as f64;
                let w: f64 = member_ids.iter().map(|&i| samples[i].width).sum();
                let h: f64 = member_ids.iter().map(|&i| samples[i].height).sum();
                Shape::new(w / n, h / n)
            }
            CentroidUpdate::Medoid => {
                let mut best = member_ids[0];
                let mut best_sum = f64::INFINITY;
                for &i in member_ids {
                    let sum: f64 = member_ids
                        .iter()
                        .map(|&j| shape_distance(&samples[i], &samples[j]))
                        .sum();
                    if sum < best_sum {
                        best_sum = sum;
                        best = i;
                    }
                }
                samples[best]
            }
        };
        centroids.push(centroid);
    }
    // Empty clusters are reseeded with the worst-fitted samples under the
    // pre-update centroids: largest assigned distance wins, ties break to
    // the lowest sample index, and each reseed claims a distinct sample.
    let empties: Vec<usize> = members.iter().enumerate().filter(|(_, m)| m.is_empty()).map(|(c, _)| c).collect();
    if !empties.is_empty() {
        let mut fit: Vec<(usize, f64)> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (i, shape_distance(s, &old_centroids[assignment[i]])))
            .collect();
        fit.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (slot, cluster) in empties.into_iter().enumerate() {
            if let Some(&(sample_idx, _)) = fit.get(slot) {
                centroids[cluster] = samples[sample_idx];
            }
        }
    }
    centroids
}

/// Lloyd iteration under the 1 - IoU shape metric, starting from `init`.
///
/// Each iteration assigns samples to their nearest centroid and recomputes
/// centroids with the selected update rule. Iteration stops when the
/// assignment repeats, when the mean best distance improves by less than
/// `min_improvement`, or at `max_iterations`. An update that would make the
/// objective worse is discarded, which keeps the mean best IoU monotonically
/// non-decreasing over the run (the mean update rule does not minimize the
/// IoU metric within a cluster, so this guard is load-bearing).
pub fn kmeans_optimize(
    samples: &[Shape],
    init: &AnchorSet,
    params: &KMeansParams,
) -> Result<AnchorSet, AnchorError> {
    if samples.is_empty() {
        return Err(AnchorError::EmptySampleSet);
    }
    if params.k == 0 {
        return Err(AnchorError::ZeroK);
    }
    if params.k > samples.len() {
        return Err(AnchorError::KExceedsSamples { k: params.k, samples: samples.len() });
    }
    if init.shapes.len() != params.k {
        return Err(AnchorError::InitMismatch { expected: params.k, got: init.shapes.len() });
    }

    let mut centroids = init.shapes.clone();
    let mut prev_assignment: Option<Vec<usize>> = None;
    let mut iterations_run = 0u32;
    for iter in 1..=params.max_iterations {
        iterations_run = iter;
        let (assignment, mean_before) = assign(samples, &centroids);
        if prev_assignment.as_deref() == Some(assignment.as_slice()) {
            break;
        }
        let candidate = update_centroids(samples, &assignment, &centroids, params.update);
        let mean_after = mean_min_distance(samples, &candidate);
        let improvement = mean_before - mean_after;
        if improvement <= 0.0 {
            break; // candidate is no better; keep the current centroids
        }
        centroids = candidate;
        prev_assignment = Some(assignment);
        debug_assert!(improvement >= -1e-12, "objective regressed past tolerance");
        if improvement < params.min_improvement {
            break;
        }
    }

    Ok(AnchorSet { shapes: centroids, provenance: Provenance::Optimized, iterations_run })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnchorSet {
    provenance: String,
    iterations_run: u32,
    shapes: Vec<[f64; 2]>,
    decomposed: Vec<[f64; 2]>,
}

/// Canonical anchor JSON: provenance, iteration count, shapes as
/// `[width, height]` pairs, and their `[scale, ratio]` decompositions.
pub fn anchor_set_to_json(set: &AnchorSet) -> String {
    let raw = RawAnchorSet {
        provenance: set.provenance.as_str().to_string(),
        iterations_run: set.iterations_run,
        shapes: set.shapes.iter().map(|&s| s.into()).collect(),
        decomposed: set
            .shapes
            .iter()
            .map(|s| {
                let (scale, ratio) = decompose_anchor(s);
                [scale, ratio]
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&raw).expect("anchor set serializes");
    out.push('\n');
    out
}

/// Parses anchor JSON written by [`anchor_set_to_json`].
pub fn anchor_set_from_json(text: &str) -> Result<AnchorSet, AnchorError> {
    let raw: RawAnchorSet =
        serde_json::from_str(text).map_err(|e| AnchorError::MalformedJson(e.to_string()))?;
    let provenance = match raw.provenance.as_str() {
        "traditional" => Provenance::Traditional,
        "optimized" => Provenance::Optimized,
        other => {
            return Err(AnchorError::MalformedJson(format!(
                "unknown provenance \"{other}\" (expected \"traditional\" or \"optimized\")"
            )))
        }
    };
    if raw.decomposed.len() != raw.shapes.len() {
        return Err(AnchorError::MalformedJson(format!(
            "decomposed has {} entries for {} shapes",
            raw.decomposed.len(),
            raw.shapes.len()
        )));
    }
    let shapes: Vec<Shape> = raw.shapes.into_iter().map(Shape::from).collect();
    for s in &shapes {
        if !(s.width.is_finite() && s.height.is_finite() && s.width > 0.0 && s.height > 0.0) {
            return Err(AnchorError::MalformedJson(format!(
                "anchor dimensions must be positive and finite, got [{}, {}]",
                s.width, s.height
            )));
        }
    }
    if shapes.is_empty() {
        return Err(AnchorError::MalformedJson("anchor set has no shapes".into()));
    }
    Ok(AnchorSet { shapes, provenance, iterations_run: raw.iterations_run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::ingest::PageRecord;
    use crate::synth::Prng;

    fn shapes(pairs: &[(f64, f64)]) -> Vec<Shape> {
        pairs.iter().map(|&(w, h)| Shape::new(w, h)).collect()
    }

    #[test]
    fn traditional_single_cell() {
        let set = generate_traditional_anchors(&AnchorSpec { scales: vec![16.0], ratios: vec![4.0] }).unwrap();
        assert_eq!(set.shapes, shapes(&[(32.0, 8.0)]));
        assert_eq!(set.provenance, Provenance::Traditional);
        assert_eq!(set.iterations_run, 0);
    }

    #[test]
    fn traditional_grid_count_and_decomposition_round_trip() {
        let spec = AnchorSpec {
            scales: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            ratios: vec![0.5, 1.0, 2.0],
        };
        let set = generate_traditional_anchors(&spec).unwrap();
        assert_eq!(set.shapes.len(), 15);
        for (i, shape) in set.shapes.iter().enumerate() {
            let scale = spec.scales[i / 3];
            let ratio = spec.ratios[i % 3];
            let (s, r) = decompose_anchor(shape);
            assert!((s - scale).abs() < 1e-9);
            assert!((r - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn traditional_rejects_bad_specs() {
        assert!(matches!(
            generate_traditional_anchors(&AnchorSpec { scales: vec![], ratios: vec![1.0] }),
            Err(AnchorError::InvalidSpec(_))
        ));
        assert!(matches!(
            generate_traditional_anchors(&AnchorSpec { scales: vec![16.0], ratios: vec![-2.0] }),
            Err(AnchorError::InvalidSpec(_))
        ));
    }

    #[test]
    fn decompose_example() {
        let (scale, ratio) = decompose_anchor(&Shape::new(50.0, 10.0));
        assert!((scale - 500.0f64.sqrt()).abs() < 1e-12);
        assert!((ratio - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mean_best_iou_from_formula() {
        let samples = shapes(&[(100.0, 10.0), (10.0, 100.0)]);
        let anchors = AnchorSet {
            shapes: shapes(&[(100.0, 10.0)]),
            provenance: Provenance::Traditional,
            iterations_run: 0,
        };
        // shape_iou((10,100),(100,10)) = 100 / (1000 + 1000 - 100) = 1/19
        let expected = (1.0 + 1.0 / 19.0) / 2.0;
        assert!((mean_best_iou(&samples, &anchors) - expected).abs() < 1e-12);
    }

    fn init_set(pairs: &[(f64, f64)]) -> AnchorSet {
        AnchorSet { shapes: shapes(pairs), provenance: Provenance::Traditional, iterations_run: 0 }
    }

    #[test]
    fn kmeans_splits_bimodal_samples() {
        let samples = shapes(&[
            (100.0, 10.0), (100.0, 10.0), (100.0, 10.0), (100.0, 10.0),
            (10.0, 100.0), (10.0, 100.0), (10.0, 100.0), (10.0, 100.0),
        ]);
        let init = init_set(&[(50.0, 50.0), (60.0, 60.0)]);
        let result = kmeans_optimize(&samples, &init, &KMeansParams::new(2)).unwrap();
        assert!(result.iterations_run <= 10);
        assert_eq!(result.provenance, Provenance::Optimized);
        let mut got: Vec<(f64, f64)> = result.shapes.iter().map(|s| (s.width, s.height)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, vec![(10.0, 100.0), (100.0, 10.0)]);
        assert_eq!(mean_best_iou(&samples, &result), 1.0);
    }

    #[test]
    fn kmeans_fixed_point_stops_after_one_iteration() {
        // Init equals the per-cluster means of the stable assignment.
        let samples = shapes(&[(100.0, 10.0), (100.0, 10.0), (10.0, 100.0), (10.0, 100.0)]);
        let init = init_set(&[(100.0, 10.0), (10.0, 100.0)]);
        let result = kmeans_optimize(&samples, &init, &KMeansParams::new(2)).unwrap();
        assert_eq!(result.iterations_run, 1);
        assert_eq!(result.shapes, init.shapes);
    }

    #[test]
    fn kmeans_reseeds_empty_clusters() {
        let samples = shapes(&[(10.0, 10.0), (10.0, 10.0), (30.0, 30.0)]);
        let init = init_set(&[(20.0, 20.0), (1000.0, 1000.0)]);
        let result = kmeans_optimize(&samples, &init, &KMeansParams::new(2)).unwrap();
        let mut got: Vec<(f64, f64)> = result.shapes.iter().map(|s| (s.width, s.height)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, vec![(10.0, 10.0), (30.0, 30.0)]);
    }

    #[test]
    fn kmeans_medoid_update_picks_members() {
        let samples = shapes(&[(10.0, 10.0), (12.0, 12.0), (100.0, 100.0)]);
        let init = init_set(&[(11.0, 11.0)]);
        let params = KMeansParams { update: CentroidUpdate::Medoid, ..KMeansParams::new(1) };
        let result = kmeans_optimize(&samples, &init, &params).unwrap();
        assert_eq!(result.shapes, shapes(&[(12.0, 12.0)]));
    }

    #[test]
    fn kmeans_error_cases() {
        let samples = shapes(&[(10.0, 10.0), (20.0, 20.0)]);
        let init = init_set(&[(10.0, 10.0)]);
        assert!(matches!(
            kmeans_optimize(&[], &init, &KMeansParams::new(1)),
            Err(AnchorError::EmptySampleSet)
        ));
        assert!(matches!(
            kmeans_optimize(&samples, &init, &KMeansParams::new(0)),
            Err(AnchorError::ZeroK)
        ));
        assert!(matches!(
            kmeans_optimize(&samples, &init, &KMeansParams::new(3)),
            Err(AnchorError::KExceedsSamples { k: 3, samples: 2 })
        ));
        assert!(matches!(
            kmeans_optimize(&samples, &init, &KMeansParams::new(2)),
            Err(AnchorError::InitMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn kmeans_never_loses_coverage_and_is_deterministic() {
        let mut rng = Prng::new(77);
        for case in 0..40 {
            let n = 3 + (case % 10) as usize;
            let samples: Vec<Shape> = (0..n)
                .map(|_| Shape::new(1.0 + 400.0 * rng.uniform(), 1.0 + 400.0 * rng.uniform()))
                .collect();
            let k = 1 + (case as usize % 3).min(n - 1);
            let init = AnchorSet {
                shapes: samples[..k].to_vec(),
                provenance: Provenance::Traditional,
                iterations_run: 0,
            };
            let params = KMeansParams::new(k);
            let a = kmeans_optimize(&samples, &init, &params).unwrap();
            let b = kmeans_optimize(&samples, &init, &params).unwrap();
            assert_eq!(a, b, "case {case} not bit-identical");
            let before = mean_best_iou(&samples, &init);
            let after = mean_best_iou(&samples, &a);
            assert!(after >= before - 1e-12, "case {case}: coverage fell {before} -> {after}");
        }
    }

    #[test]
    fn extract_samples_filters_class_and_zero_area() {
        let page = PageRecord {
            page_id: "p1".into(),
            image_path: None,
            width: 200,
            height: 200,
            rows: vec![BBox::new(10.0, 10.0, 90.0, 20.0), BBox::new(5.0, 5.0, 5.0, 9.0)],
            columns: vec![BBox::new(10.0, 10.0, 20.0, 190.0)],
        };
        let dataset = Dataset { pages: vec![page] };
        let rows = extract_shape_samples(&dataset, ObjectClass::Row).unwrap();
        assert_eq!(rows.shapes, shapes(&[(80.0, 10.0)]));
        assert_eq!(rows.skipped_zero_area, 1);
        let cols = extract_shape_samples(&dataset, ObjectClass::Column).unwrap();
        assert_eq!(cols.shapes, shapes(&[(10.0, 180.0)]));
        let empty = Dataset { pages: vec![] };
        assert!(matches!(
            extract_shape_samples(&empty, ObjectClass::Row),
            Err(AnchorError::EmptySampleSet)
        ));
    }

    #[test]
    fn anchor_json_round_trip() {
        let set = AnchorSet {
            shapes: shapes(&[(32.0, 8.0), (100.5, 10.25)]),
            provenance: Provenance::Optimized,
            iterations_run: 17,
        };
        let json = anchor_set_to_json(&set);
        let back = anchor_set_from_json(&json).unwrap();
        assert_eq!(back, set);
        assert!(json.contains("\"provenance\": \"optimized\""));
        assert!(json.contains("\"iterations_run\": 17"));
    }

    #[test]
    fn anchor_json_rejects_garbage() {
        assert!(matches!(anchor_set_from_json("{"), Err(AnchorError::MalformedJson(_))));
        let bad_provenance = r#"{"provenance":"magic","iterations_run":0,"shapes":[[1.0,2.0]],"decomposed":[[1.4,0.5]]}"#;
        assert!(matches!(anchor_set_from_json(bad_provenance), Err(AnchorError::MalformedJson(_))));
        let negative = r#"{"provenance":"optimized","iterations_run":0,"shapes":[[-1.0,2.0]],"decomposed":[[1.4,-0.5]]}"#;
        assert!(matches!(anchor_set_from_json(negative), Err(AnchorError::MalformedJson(_))));
    }
}
