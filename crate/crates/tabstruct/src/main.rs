//! Command-line front end. Every subcommand accepts `--config <json>` whose
//! snake_case keys mirror the long flags; explicit flags win over config
//! values, which win over the built-in defaults noted in the help text.
//!
//! Exit codes: 0 success, 2 bad input or usage, 3 structurally valid but
//! empty input, 4 a requested quality gate failed.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tabstruct::anchors::{
    anchor_set_from_json, anchor_set_to_json, extract_shape_samples, generate_traditional_anchors,
    kmeans_optimize, mean_best_iou, AnchorError, AnchorSpec, CentroidUpdate, KMeansParams,
};
use tabstruct::eval::{
    evaluate_dataset, report_to_json, EvalConfig, EvalError, MatchPolicy, MetricMode,
};
use tabstruct::geometry::BBox;
use tabstruct::ingest::{
    apply_resize_policy, load_detections, load_gray_image, load_pages, write_detections_jsonl,
    write_pages_jsonl, write_pgm, Dataset, Detection, IngestError, ObjectClass,
};
use tabstruct::refine::{
    otsu_threshold, refine_detections, write_audit_jsonl, RefineError, RefineMode, RefineParams,
};
use tabstruct::render::{render_anchor_gallery, render_overlay};
use tabstruct::synth::{
    derive_page_seed, generate_page, perturb_detections, PerturbSpec, SynthError, TableLayoutSpec,
};

#[derive(Parser)]
#[command(
    name = "tabstruct",
    version,
    about = "Table structure toolkit: anchor optimization, layout-based box refinement, \
             detection evaluation, synthetic page generation"
)]
struct Cli {
    /// Worker threads for page-parallel work [default: 1]
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize anchor shapes against ground-truth boxes with IoU k-means
    Optimize(OptimizeArgs),
    /// Snap detection boxes to the ink extents of a page bitmap
    Refine(RefineArgs),
    /// Score detections against ground truth and emit a JSON report
    Eval(EvalArgs),
    /// Generate a deterministic synthetic dataset of table pages
    Synth(SynthArgs),
    /// Draw an anchor gallery SVG or a page overlay PNG
    Render(RenderArgs),
}

/// A failed run: the message goes to stderr, the code to the shell.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn empty(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    fn gate(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<AnchorError> for Failure {
    fn from(e: AnchorError) -> Self {
        match e {
            AnchorError::EmptySampleSet => Failure::empty(e.to_string()),
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptyDataset => Failure::empty(e.to_string()),
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<RefineError> for Failure {
    fn from(e: RefineError) -> Self {
        Failure::usage(e.to_string())
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

fn load_config<T: Default + for<'de> Deserialize<'de>>(
    path: &Option<PathBuf>,
) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = read_file(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("config {}: {e}", p.display())))
        }
    }
}

/// Flag wins, then the config value, then the caller's default.
fn merge_enum<T: ValueEnum>(
    flag: Option<T>,
    config: Option<String>,
    what: &str,
) -> Result<Option<T>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    config
        .map(|s| {
            T::from_str(&s, true)
                .map_err(|_| Failure::usage(format!("config value \"{s}\" is not a valid {what}")))
        })
        .transpose()
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Failure::usage(format!("{what}: \"{s}\" is not a number")))
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassArg {
    Row,
    Column,
}

impl From<ClassArg> for ObjectClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Row => ObjectClass::Row,
            ClassArg::Column => ObjectClass::Column,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UpdateArg {
    Mean,
    Medoid,
}

impl From<UpdateArg> for CentroidUpdate {
    fn from(u: UpdateArg) -> Self {
        match u {
            UpdateArg::Mean => CentroidUpdate::Mean,
            UpdateArg::Medoid => CentroidUpdate::Medoid,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScanModeArg {
    Paper,
    Gap,
}

impl From<ScanModeArg> for RefineMode {
    fn from(m: ScanModeArg) -> Self {
        match m {
            ScanModeArg::Paper => RefineMode::PaperFaithful,
            ScanModeArg::Gap => RefineMode::GapLimited,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Count,
    Area,
}

impl From<MetricArg> for MetricMode {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Count => MetricMode::CountBased,
            MetricArg::Area => MetricMode::AreaBased,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MatchArg {
    Greedy,
    Exact,
}

impl From<MatchArg> for MatchPolicy {
    fn from(m: MatchArg) -> Self {
        match m {
            MatchArg::Greedy => MatchPolicy::Greedy,
            MatchArg::Exact => MatchPolicy::Exact,
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    /// Ground truth: a pages JSONL file or a directory of XML annotations
    #[arg(long, value_name = "PATH")]
    gt: Option<PathBuf>,
    /// Object class whose boxes feed the optimizer
    #[arg(long, value_enum)]
    class: Option<ClassArg>,
    /// Comma-separated anchor scales [default: 16,32,64,128,256]
    #[arg(long)]
    scales: Option<String>,
    /// Comma-separated anchor aspect ratios [default: 0.5,1,2]
    #[arg(long)]
    ratios: Option<String>,
    /// Reserved for randomized initialization [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration cap [default: 300]
    #[arg(long)]
    max_iter: Option<u32>,
    /// Centroid update rule [default: mean]
    #[arg(long, value_enum)]
    update: Option<UpdateArg>,
    /// Output path for the optimized anchor JSON
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON file supplying defaults for the flags above (snake_case keys)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeFileConfig {
    gt: Option<PathBuf>,
    class: Option<String>,
    scales: Option<Vec<f64>>,
    ratios: Option<Vec<f64>>,
    seed: Option<u64>,
    max_iter: Option<u32>,
    update: Option<String>,
    out: Option<PathBuf>,
}

fn run_optimize(args: OptimizeArgs) -> Result<(), Failure> {
    let cfg: OptimizeFileConfig = load_config(&args.config)?;
    let gt = args.gt.or(cfg.gt).ok_or_else(|| Failure::usage("--gt is required"))?;
    let class: ObjectClass = merge_enum(args.class, cfg.class, "class")?
        .ok_or_else(|| Failure::usage("--class is required (row or column)"))?
        .into();
    let scales = match args.scales {
        Some(s) => parse_f64_list(&s, "--scales")?,
        None => cfg.scales.unwrap_or_else(|| vec![16.0, 32.0, 64.0, 128.0, 256.0]),
    };
    let ratios = match args.ratios {
        Some(s) => parse_f64_list(&s, "--ratios")?,
        None => cfg.ratios.unwrap_or_else(|| vec![0.5, 1.0, 2.0]),
    };
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let max_iterations = args.max_iter.or(cfg.max_iter).unwrap_or(300);
    let update: CentroidUpdate =
        merge_enum(args.update, cfg.update, "update rule")?.unwrap_or(UpdateArg::Mean).into();
    let out = args.out.or(cfg.out).ok_or_else(|| Failure::usage("--out is required"))?;

    let (dataset, stats) = load_pages(&gt)?;
    if stats.clipped_boxes > 0 {
        eprintln!("note: clamped {} out-of-bounds boxes while parsing", stats.clipped_boxes);
    }
    // Shapes are sampled in the working resolution the policy defines, so
    // oversized pages are scaled down before extraction.
    let dataset = Dataset {
        pages: dataset.pages.iter().map(|p| apply_resize_policy(p, None).0).collect(),
    };
    let samples = extract_shape_samples(&dataset, class)?;
    if samples.skipped_zero_area > 0 {
        eprintln!("note: skipped {} zero-area boxes", samples.skipped_zero_area);
    }
    let traditional = generate_traditional_anchors(&AnchorSpec { scales, ratios })?;
    let params = KMeansParams {
        max_iterations,
        seed,
        update,
        ..KMeansParams::new(traditional.shapes.len())
    };
    let before = mean_best_iou(&samples.shapes, &traditional);
    let optimized = kmeans_optimize(&samples.shapes, &traditional, &params)?;
    let after = mean_best_iou(&samples.shapes, &optimized);
    write_file(&out, anchor_set_to_json(&optimized).as_bytes())?;
    println!("samples: {}", samples.shapes.len());
    println!("anchors: {}", params.k);
    println!("iterations: {}", optimized.iterations_run);
    println!("mean_best_iou traditional: {before:.6}");
    println!("mean_best_iou optimized: {after:.6}");
    Ok(())
}

#[derive(Args)]
struct RefineArgs {
    /// Directory holding one bitmap per page, named <page_id>.png or .pgm
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    /// Input detections JSONL
    #[arg(long, value_name = "PATH")]
    dets: Option<PathBuf>,
    /// Output path for the refined detections JSONL
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Ink cutoff: a pixel is ink when strictly below this [default: 128]
    #[arg(long)]
    intensity: Option<u8>,
    /// Derive the ink cutoff per page from its intensity histogram
    #[arg(long)]
    otsu: bool,
    /// Minimum ink pixels for a qualifying probe strip [default: 2]
    #[arg(long)]
    black_threshold: Option<u32>,
    /// Probe strip width in columns [default: 1]
    #[arg(long)]
    probe_width: Option<u32>,
    /// Scan strategy: full-width or gap-limited outward [default: paper]
    #[arg(long, value_enum)]
    mode: Option<ScanModeArg>,
    /// Consecutive blank columns that end a gap-limited scan [default: 50]
    #[arg(long)]
    gap_limit: Option<u32>,
    /// Also refine column boxes, on the transposed page
    #[arg(long)]
    refine_columns: bool,
    /// Restrict scans to the region x0,y0,x1,y1
    #[arg(long, value_name = "X0,Y0,X1,Y1")]
    clamp: Option<String>,
    /// Optional audit JSONL recording before/after per box
    #[arg(long, value_name = "PATH")]
    audit: Option<PathBuf>,
    /// JSON file supplying defaults for the flags above (snake_case keys)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineFileConfig {
    images: Option<PathBuf>,
    dets: Option<PathBuf>,
    out: Option<PathBuf>,
    intensity: Option<u8>,
    otsu: Option<bool>,
    black_threshold: Option<u32>,
    probe_width: Option<u32>,
    mode: Option<String>,
    gap_limit: Option<u32>,
    refine_columns: Option<bool>,
    clamp: Option<[f64; 4]>,
    audit: Option<PathBuf>,
}

fn run_refine(args: RefineArgs) -> Result<(), Failure> {
    let cfg: RefineFileConfig = load_config(&args.config)?;
    let images = args.images.or(cfg.images).ok_or_else(|| Failure::usage("--images is required"))?;
    let dets_path = args.dets.or(cfg.dets).ok_or_else(|| Failure::usage("--dets is required"))?;
    let out = args.out.or(cfg.out).ok_or_else(|| Failure::usage("--out is required"))?;
    let otsu = args.otsu || cfg.otsu.unwrap_or(false);
    let refine_columns = args.refine_columns || cfg.refine_columns.unwrap_or(false);
    let clamp = match args.clamp {
        Some(s) => {
            let v = parse_f64_list(&s, "--clamp")?;
            match v.as_slice() {
                &[x0, y0, x1, y1] => Some([x0, y0, x1, y1]),
                _ => return Err(Failure::usage("--clamp takes exactly four numbers")),
            }
        }
        None => cfg.clamp,
    };
    let scan_clamp = clamp
        .map(|[x0, y0, x1, y1]| {
            if x0 <= x1 && y0 <= y1 {
                Ok(BBox::new(x0, y0, x1, y1))
            } else {
                Err(Failure::usage("--clamp region has inverted corners"))
            }
        })
        .transpose()?;
    let audit_path = args.audit.or(cfg.audit);
    let params = RefineParams {
        intensity_threshold: args.intensity.or(cfg.intensity).unwrap_or(128),
        black_pixel_threshold: args.black_threshold.or(cfg.black_threshold).unwrap_or(2),
        probe_width: args.probe_width.or(cfg.probe_width).unwrap_or(1),
        mode: merge_enum(args.mode, cfg.mode, "scan mode")?.unwrap_or(ScanModeArg::Paper).into(),
        gap_limit: args.gap_limit.or(cfg.gap_limit).unwrap_or(50),
        scan_clamp,
    };

    let detections = load_detections(&dets_path)?;
    if detections.is_empty() {
        return Err(Failure::empty(format!("{} holds no detections", dets_path.display())));
    }
    // Group by page, keeping first-appearance order so a missing image is
    // reported deterministically; outputs are later scattered back to the
    // original positions, so the emitted order matches the input exactly.
    let mut page_order: Vec<String> = Vec::new();
    let mut page_indices: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, det) in detections.iter().enumerate() {
        page_indices.entry(det.page_id.clone()).or_insert_with(|| {
            page_order.push(det.page_id.clone());
            Vec::new()
        });
        page_indices.get_mut(&det.page_id).expect("entry exists").push(i);
    }
    let mut jobs: Vec<(String, PathBuf, Vec<usize>)> = Vec::with_capacity(page_order.len());
    for page_id in page_order {
        let png = images.join(format!("{page_id}.png"));
        let pgm = images.join(format!("{page_id}.pgm"));
        let path = if png.is_file() {
            png
        } else if pgm.is_file() {
            pgm
        } else {
            return Err(Failure::usage(format!(
                "no image for page \"{page_id}\" under {} (tried .png and .pgm)",
                images.display()
            )));
        };
        let indices = page_indices.remove(&page_id).expect("grouped above");
        jobs.push((page_id, path, indices));
    }

    let per_page: Vec<_> = jobs
        .par_iter()
        .map(|(page_id, path, indices)| -> Result<_, Failure> {
            let image = load_gray_image(path)?;
            let mut page_params = params.clone();
            if otsu {
                page_params.intensity_threshold = otsu_threshold(&image);
            }
            let page_dets: Vec<Detection> =
                indices.iter().map(|&i| detections[i].clone()).collect();
            let (refined, audits) =
                refine_detections(&image, page_id, &page_dets, &page_params, refine_columns)?;
            Ok((indices, refined, audits))
        })
        .collect::<Result<_, _>>()?;

    let mut out_dets: Vec<Option<Detection>> = vec![None; detections.len()];
    let mut out_audits = vec![None; detections.len()];
    let page_count = per_page.len();
    for (indices, refined, audits) in per_page {
        for ((&i, det), audit) in indices.iter().zip(refined).zip(audits) {
            out_dets[i] = Some(det);
            out_audits[i] = Some(audit);
        }
    }
    let refined: Vec<Detection> = out_dets.into_iter().map(|d| d.expect("all slots filled")).collect();
    write_file(&out, write_detections_jsonl(&refined).as_bytes())?;
    if let Some(audit_out) = audit_path {
        let audits: Vec<_> = out_audits.into_iter().map(|a| a.expect("all slots filled")).collect();
        write_file(&audit_out, write_audit_jsonl(&audits).as_bytes())?;
    }
    println!("refined {} detections across {} pages", refined.len(), page_count);
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// Ground truth: a pages JSONL file or a directory of XML annotations
    #[arg(long, value_name = "PATH")]
    gt: Option<PathBuf>,
    /// Predicted detections JSONL
    #[arg(long, value_name = "PATH")]
    pred: Option<PathBuf>,
    /// IoU threshold for a match [default: 0.5]
    #[arg(long)]
    iou: Option<f64>,
    /// Scoring mode: matched-box counts or literal overlap areas [default: count]
    #[arg(long, value_enum)]
    mode: Option<MetricArg>,
    /// Match selection among candidate pairs [default: greedy]
    #[arg(long, value_enum)]
    matching: Option<MatchArg>,
    /// Write the JSON report here instead of stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Fail (exit 4) when the dataset average F falls below this
    #[arg(long)]
    min_average_f: Option<f64>,
    /// JSON file supplying defaults for the flags above (snake_case keys)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFileConfig {
    gt: Option<PathBuf>,
    pred: Option<PathBuf>,
    iou: Option<f64>,
    mode: Option<String>,
    matching: Option<String>,
    out: Option<PathBuf>,
    min_average_f: Option<f64>,
}

fn run_eval(args: EvalArgs) -> Result<(), Failure> {
    let cfg: EvalFileConfig = load_config(&args.config)?;
    let gt = args.gt.or(cfg.gt).ok_or_else(|| Failure::usage("--gt is required"))?;
    let pred = args.pred.or(cfg.pred).ok_or_else(|| Failure::usage("--pred is required"))?;
    let iou_threshold = args.iou.or(cfg.iou).unwrap_or(0.5);
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Failure::usage("--iou must lie in [0, 1]"));
    }
    let config = EvalConfig {
        iou_threshold,
        mode: merge_enum(args.mode, cfg.mode, "metric mode")?.unwrap_or(MetricArg::Count).into(),
        matching: merge_enum(args.matching, cfg.matching, "match policy")?
            .unwrap_or(MatchArg::Greedy)
            .into(),
    };
    let min_average_f = args.min_average_f.or(cfg.min_average_f);
    let out = args.out.or(cfg.out);

    let (dataset, _) = load_pages(&gt)?;
    let predictions = load_detections(&pred)?;
    let report = evaluate_dataset(&dataset.pages, &predictions, &config)?;
    let json = report_to_json(&report, &config);
    match &out {
        Some(path) => {
            write_file(path, json.as_bytes())?;
            println!("average_f: {:.6}", report.average_f);
        }
        None => print!("{json}"),
    }
    if let Some(gate) = min_average_f {
        if report.average_f < gate {
            return Err(Failure::gate(format!(
                "dataset average F {:.6} is below the required minimum {gate:.6}",
                report.average_f
            )));
        }
    }
    Ok(())
}

#[derive(Args)]
struct SynthArgs {
    /// Job spec JSON: {"pages": N, "layout": {...}, "perturb": {...}}
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,
    /// Output directory (created if absent)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// JSON file supplying defaults for the flags above (snake_case keys)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthFileConfig {
    spec: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthJob {
    pages: u32,
    layout: TableLayoutSpec,
    #[serde(default)]
    perturb: Option<PerturbSpec>,
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    pages: u32,
    layout: &'a TableLayoutSpec,
    perturb: &'a PerturbSpec,
    page_seeds: &'a [u64],
    perturb_seeds: &'a [u64],
}

fn run_synth(args: SynthArgs) -> Result<(), Failure> {
    let cfg: SynthFileConfig = load_config(&args.config)?;
    let spec_path = args.spec.or(cfg.spec).ok_or_else(|| Failure::usage("--spec is required"))?;
    let out_dir = args.out.or(cfg.out).ok_or_else(|| Failure::usage("--out is required"))?;
    let job: SynthJob = serde_json::from_str(&read_file(&spec_path)?)
        .map_err(|e| Failure::usage(format!("spec {}: {e}", spec_path.display())))?;
    if job.pages == 0 {
        return Err(Failure::empty("spec asks for zero pages"));
    }
    let perturb = job
        .perturb
        .unwrap_or(PerturbSpec { width_jitter_frac: 0.15, drop_prob: 0.0, seed: 0 });

    let page_seeds: Vec<u64> =
        (0..job.pages).map(|i| derive_page_seed(job.layout.seed, i as u64)).collect();
    let perturb_seeds: Vec<u64> =
        (0..job.pages).map(|i| derive_page_seed(perturb.seed, i as u64)).collect();

    let generated: Vec<_> = (0..job.pages as usize)
        .into_par_iter()
        .map(|i| -> Result<_, Failure> {
            let page_id = format!("p{i:04}");
            let layout = TableLayoutSpec { seed: page_seeds[i], ..job.layout.clone() };
            let (image, mut record) = generate_page(&layout, &page_id)?;
            let page_perturb = PerturbSpec { seed: perturb_seeds[i], ..perturb.clone() };
            let dets = perturb_detections(&record, &page_perturb)?;
            record.image_path = Some(format!("images/{page_id}.pgm"));
            Ok((record, image, dets))
        })
        .collect::<Result<_, _>>()?;

    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", images_dir.display())))?;
    let mut dataset = Dataset::default();
    let mut detections = Vec::new();
    for (record, image, dets) in generated {
        let image_path = out_dir.join(record.image_path.as_deref().expect("set above"));
        write_file(&image_path, &write_pgm(&image))?;
        dataset.pages.push(record);
        detections.extend(dets);
    }
    write_file(&out_dir.join("gt.jsonl"), write_pages_jsonl(&dataset).as_bytes())?;
    write_file(&out_dir.join("dets.jsonl"), write_detections_jsonl(&detections).as_bytes())?;
    let manifest = SynthManifest {
        pages: job.pages,
        layout: &job.layout,
        perturb: &perturb,
        page_seeds: &page_seeds,
        perturb_seeds: &perturb_seeds,
    };
    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&out_dir.join("manifest.json"), manifest_json.as_bytes())?;
    println!("generated {} pages into {}", job.pages, out_dir.display());
    Ok(())
}

#[derive(Args)]
struct RenderArgs {
    /// Anchor JSON to draw as an SVG gallery
    #[arg(long, value_name = "PATH")]
    anchors: Option<PathBuf>,
    /// Page bitmap to draw box overlays on
    #[arg(long, value_name = "PATH")]
    page: Option<PathBuf>,
    /// Ground-truth pages (JSONL or XML dir); required with --page
    #[arg(long, value_name = "PATH")]
    gt: Option<PathBuf>,
    /// Detections JSONL drawn in red
    #[arg(long, value_name = "PATH")]
    pred: Option<PathBuf>,
    /// Refined detections JSONL drawn in blue
    #[arg(long, value_name = "PATH")]
    refined: Option<PathBuf>,
    /// Output path (.svg for galleries, .png for overlays)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON file supplying defaults for the flags above (snake_case keys)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderFileConfig {
    anchors: Option<PathBuf>,
    page: Option<PathBuf>,
    gt: Option<PathBuf>,
    pred: Option<PathBuf>,
    refined: Option<PathBuf>,
    out: Option<PathBuf>,
}

fn page_boxes(path: &Path, page_id: &str) -> Result<Vec<BBox>, Failure> {
    let dets = load_detections(path)?;
    Ok(dets.iter().filter(|d| d.page_id == page_id).map(|d| d.bbox).collect())
}

fn run_render(args: RenderArgs) -> Result<(), Failure> {
    let cfg: RenderFileConfig = load_config(&args.config)?;
    let anchors = args.anchors.or(cfg.anchors);
    let page = args.page.or(cfg.page);
    let gt = args.gt.or(cfg.gt);
    let pred = args.pred.or(cfg.pred);
    let refined = args.refined.or(cfg.refined);
    let out = args.out.or(cfg.out).ok_or_else(|| Failure::usage("--out is required"))?;

    match (anchors, page) {
        (Some(_), Some(_)) => {
            Err(Failure::usage("--anchors and --page are mutually exclusive"))
        }
        (None, None) => Err(Failure::usage("one of --anchors or --page is required")),
        (Some(anchor_path), None) => {
            if gt.is_some() || pred.is_some() || refined.is_some() {
                return Err(Failure::usage("--gt/--pred/--refined only apply with --page"));
            }
            let set = anchor_set_from_json(&read_file(&anchor_path)?)?;
            write_file(&out, render_anchor_gallery(&set).as_bytes())?;
            println!("wrote gallery of {} anchors to {}", set.shapes.len(), out.display());
            Ok(())
        }
        (None, Some(page_path)) => {
            let gt_path = gt.ok_or_else(|| Failure::usage("--gt is required with --page"))?;
            let page_id = page_path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Failure::usage("--page path has no usable file stem"))?
                .to_string();
            let (dataset, _) = load_pages(&gt_path)?;
            let record = dataset
                .pages
                .iter()
                .find(|p| p.page_id == page_id)
                .ok_or_else(|| {
                    Failure::usage(format!(
                        "page \"{page_id}\" not found in {}",
                        gt_path.display()
                    ))
                })?;
            let image = load_gray_image(&page_path)?;
            let mut gt_boxes = record.rows.clone();
            gt_boxes.extend_from_slice(&record.columns);
            let raw = match &pred {
                Some(p) => page_boxes(p, &page_id)?,
                None => Vec::new(),
            };
            let refined_boxes = match &refined {
                Some(p) => page_boxes(p, &page_id)?,
                None => Vec::new(),
            };
            let png = render_overlay(&image, &gt_boxes, &raw, &refined_boxes);
            write_file(&out, &png)?;
            println!("wrote overlay for page \"{page_id}\" to {}", out.display());
            Ok(())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Optimize(args) => run_optimize(args),
        Command::Refine(args) => run_refine(args),
        Command::Eval(args) => run_eval(args),
        Command::Synth(args) => run_synth(args),
        Command::Render(args) => run_render(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs.unwrap_or(1).max(1);
    // A failed build means a pool already exists, which only happens under
    // in-process harnesses; the default pool is fine there.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
