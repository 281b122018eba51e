//! Input parsing: page annotations (JSONL, VOC-style XML), detection lists,
//! grayscale page bitmaps (PNG, binary PGM), and the input resize policy.
//!
//! Parse errors carry the source label and, where meaningful, a 1-based line
//! number so callers can report exact locations.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clip_box, BBox};

/// Pages wider than this are scaled down before anchor sampling.
pub const MAX_PAGE_WIDTH: f64 = 1024.0;
/// Pages taller than this are scaled down before anchor sampling.
pub const MAX_PAGE_HEIGHT: f64 = 800.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{source_name}:{line}: malformed JSON: {msg}")]
    MalformedJson { source_name: String, line: usize, msg: String },
    #[error("{source_name}:{line}: duplicate page_id \"{page_id}\"")]
    DuplicatePageId { source_name: String, line: usize, page_id: String },
    #[error("{source_name}:{line}: inverted box [{x_min}, {y_min}, {x_max}, {y_max}]")]
    InvertedBox { source_name: String, line: usize, x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    #[error("{source_name}:{line}: score {score} outside [0, 1]")]
    ScoreOutOfRange { source_name: String, line: usize, score: f64 },
    #[error("{source_name}:{line}: unknown object class \"{name}\" (expected \"row\" or \"column\")")]
    UnknownClass { source_name: String, line: usize, name: String },
    #[error("{source_name}: malformed XML: {msg}")]
    MalformedXml { source_name: String, msg: String },
    #[error("{source_name}: missing required field <{field}>")]
    MissingField { source_name: String, field: String },
    #[error("{path}: {source}")]
    Io { path: String, #[source] source: std::io::Error },
    #[error("{path}: unsupported input (expected {expected})")]
    UnsupportedInput { path: String, expected: String },
    #[error("{source_name}: malformed image: {msg}")]
    MalformedImage { source_name: String, msg: String },
}

/// Annotation class of a table structure element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectClass {
    Row,
    Column,
}

impl ObjectClass {
    /// Case-insensitive parse of "row" / "column".
    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "row" => Some(Self::Row),
            "column" => Some(Self::Column),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Row => "row",
            Self::Column => "column",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One annotated page: dimensions plus ground-truth row and column boxes.
/// All boxes lie within `[0, width] x [0, height]` (enforced by clipping at
/// parse time) and dimensions are at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PageRecord {
    pub page_id: String,
    pub image_path: Option<String>,
    pub width: u32,
    pub height: u32,
    pub rows: Vec<BBox>,
    pub columns: Vec<BBox>,
}

/// One predicted box with a confidence score in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub page_id: String,
    pub class: ObjectClass,
    pub bbox: BBox,
    pub score: f64,
}

/// An ordered collection of pages with unique `page_id`s.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub pages: Vec<PageRecord>,
}

/// Non-fatal parse observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    /// Boxes that extended past the page bounds and were clamped.
    pub clipped_boxes: usize,
}

/// 8-bit grayscale bitmap, row-major; `pixels.len() == width * height`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, fill: u8) -> Self {
        Self { width, height, pixels: vec![fill; width as usize * height as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = value;
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPage {
    page_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
    width: u32,
    height: u32,
    rows: Vec<[f64; 4]>,
    columns: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    page_id: String,
    class: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

fn check_not_inverted(
    raw: [f64; 4],
    source_name: &str,
    line: usize,
) -> Result<BBox, IngestError> {
    let b = BBox::from(raw);
    if b.x_max < b.x_min || b.y_max < b.y_min {
        return Err(IngestError::InvertedBox {
            source_name: source_name.to_string(),
            line,
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        });
    }
    Ok(b)
}

/// Clips `b` to the page and bumps the clip counter when anything moved.
fn clip_counted(b: BBox, width: u32, height: u32, stats: &mut ParseStats) -> BBox {
    let clipped = clip_box(&b, width as f64, height as f64);
    if clipped != b {
        stats.clipped_boxes += 1;
    }
    clipped
}

/// Parses page records from JSONL, one JSON object per line:
/// `{"page_id", "width", "height", "rows": [[x0,y0,x1,y1], ...], "columns": [...]}`
/// (optional `"image_path"`). Boxes past the page bounds are clamped and
/// counted in the returned stats.
pub fn parse_pages_jsonl(text: &str, source_name: &str) -> Result<(Dataset, ParseStats), IngestError> {
    let mut pages = Vec::new();
    let mut stats = ParseStats::default();
    let mut seen = HashSet::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let raw: RawPage = serde_json::from_str(raw_line).map_err(|e| IngestError::MalformedJson {
            source_name: source_name.to_string(),
            line,
            msg: e.to_string(),
        })?;
        if raw.width == 0 || raw.height == 0 {
            return Err(IngestError::MalformedJson {
                source_name: source_name.to_string(),
                line,
                msg: "page dimensions must be >= 1".to_string(),
            });
        }
        if raw.page_id.is_empty() {
            return Err(IngestError::MalformedJson {
                source_name: source_name.to_string(),
                line,
                msg: "page_id must be non-empty".to_string(),
            });
        }
        if !seen.insert(raw.page_id.clone()) {
            return Err(IngestError::DuplicatePageId {
                source_name: source_name.to_string(),
                line,
                page_id: raw.page_id,
            });
        }
        let to_boxes = |raws: &[[f64; 4]], stats: &mut ParseStats| -> Result<Vec<BBox>, IngestError> {
            raws.iter()
                .map(|&r| {
                    check_not_inverted(r, source_name, line)
                        .map(|b| clip_counted(b, raw.width, raw.height, stats))
                })
                .collect()
        };
        let rows = to_boxes(&raw.rows, &mut stats)?;
        let columns = to_boxes(&raw.columns, &mut stats)?;
        pages.push(PageRecord {
            page_id: raw.page_id,
            image_path: raw.image_path,
            width: raw.width,
            height: raw.height,
            rows,
            columns,
        });
    }
    Ok((Dataset { pages }, stats))
}

/// Parses detections from JSONL, one JSON object per line:
/// `{"page_id", "class": "row"|"column", "box": [x0,y0,x1,y1], "score"}`.
pub fn parse_detections_jsonl(text: &str, source_name: &str) -> Result<Vec<Detection>, IngestError> {
    let mut dets = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let raw: RawDetection = serde_json::from_str(raw_line).map_err(|e| IngestError::MalformedJson {
            source_name: source_name.to_string(),
            line,
            msg: e.to_string(),
        })?;
        let class = ObjectClass::parse(&raw.class).ok_or_else(|| IngestError::UnknownClass {
            source_name: source_name.to_string(),
            line,
            name: raw.class.clone(),
        })?;
        if !(0.0..=1.0).contains(&raw.score) {
            return Err(IngestError::ScoreOutOfRange {
                source_name: source_name.to_string(),
                line,
                score: raw.score,
            });
        }
        let bbox = check_not_inverted(raw.bbox, source_name, line)?;
        dets.push(Detection { page_id: raw.page_id, class, bbox, score: raw.score });
    }
    Ok(dets)
}

/// Canonical page JSONL writer; output re-parses to an equal dataset and a
/// second write is byte-identical.
pub fn write_pages_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for page in &dataset.pages {
        let raw = RawPage {
            page_id: page.page_id.clone(),
            image_path: page.image_path.clone(),
            width: page.width,
            height: page.height,
            rows: page.rows.iter().map(|&b| b.into()).collect(),
            columns: page.columns.iter().map(|&b| b.into()).collect(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("page record serializes"));
        out.push('\n');
    }
    out
}

/// Canonical detection JSONL writer, mirror of [`parse_detections_jsonl`].
pub fn write_detections_jsonl(dets: &[Detection]) -> String {
    let mut out = String::new();
    for det in dets {
        let raw = RawDetection {
            page_id: det.page_id.clone(),
            class: det.class.as_str().to_string(),
            bbox: det.bbox.into(),
            score: det.score,
        };
        out.push_str(&serde_json::to_string(&raw).expect("detection serializes"));
        out.push('\n');
    }
    out
}

fn xml_line(doc: &roxmltree::Document, node: roxmltree::Node) -> usize {
    doc.text_pos_at(node.range().start).row as usize
}

fn child_text<'a>(node: roxmltree::Node<'a, 'a>, name: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .and_then(|c| c.text())
        .map(str::trim)
}

/// Parses one VOC-style XML annotation:
/// `<annotation><size><width/><height/></size><object><name/><bndbox/></object>...</annotation>`.
/// `page_id` is supplied by the caller (conventionally the file stem);
/// a `<filename>` element, when present, becomes `image_path`.
pub fn parse_voc_xml(
    text: &str,
    page_id: &str,
    source_name: &str,
) -> Result<(PageRecord, ParseStats), IngestError> {
    let src = || source_name.to_string();
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| IngestError::MalformedXml { source_name: src(), msg: e.to_string() })?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(IngestError::MalformedXml {
            source_name: src(),
            msg: format!("root element is <{}>, expected <annotation>", root.tag_name().name()),
        });
    }
    let size = root
        .children()
        .find(|c| c.has_tag_name("size"))
        .ok_or_else(|| IngestError::MissingField { source_name: src(), field: "size".into() })?;
    let dim = |field: &str| -> Result<u32, IngestError> {
        let raw = child_text(size, field)
            .ok_or_else(|| IngestError::MissingField { source_name: src(), field: format!("size/{field}") })?;
        let value: u32 = raw.parse().map_err(|_| IngestError::MalformedXml {
            source_name: src(),
            msg: format!("invalid size/{field} value \"{raw}\""),
        })?;
        if value == 0 {
            return Err(IngestError::MalformedXml {
                source_name: src(),
                msg: format!("size/{field} must be >= 1"),
            });
        }
        Ok(value)
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let image_path = child_text(root, "filename").filter(|s| !s.is_empty()).map(String::from);

    let mut stats = ParseStats::default();
    let mut rows = Vec::new();
    let mut columns = Vec::new();
    for object in root.children().filter(|c| c.has_tag_name("object")) {
        let line = xml_line(&doc, object);
        let name = child_text(object, "name")
            .ok_or_else(|| IngestError::MissingField { source_name: src(), field: "object/name".into() })?;
        let class = ObjectClass::parse(name).ok_or_else(|| IngestError::UnknownClass {
            source_name: src(),
            line,
            name: name.to_string(),
        })?;
        let bndbox = object
            .children()
            .find(|c| c.has_tag_name("bndbox"))
            .ok_or_else(|| IngestError::MissingField { source_name: src(), field: "object/bndbox".into() })?;
        let coord = |field: &str| -> Result<f64, IngestError> {
            let raw = child_text(bndbox, field).ok_or_else(|| IngestError::MissingField {
                source_name: src(),
                field: format!("object/bndbox/{field}"),
            })?;
            let value: f64 = raw.parse().map_err(|_| IngestError::MalformedXml {
                source_name: src(),
                msg: format!("invalid bndbox/{field} value \"{raw}\""),
            })?;
            if !value.is_finite() {
                return Err(IngestError::MalformedXml {
                    source_name: src(),
                    msg: format!("non-finite bndbox/{field}"),
                });
            }
            Ok(value)
        };
        let raw_box = [coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?];
        let b = check_not_inverted(raw_box, source_name, line)?;
        let b = clip_counted(b, width, height, &mut stats);
        match class {
            ObjectClass::Row => rows.push(b),
            ObjectClass::Column => columns.push(b),
        }
    }
    let record = PageRecord {
        page_id: page_id.to_string(),
        image_path,
        width,
        height,
        rows,
        columns,
    };
    Ok((record, stats))
}

fn read_to_string(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path)
        .map_err(|e| IngestError::Io { path: path.display().to_string(), source: e })
}

/// Loads ground truth from either a `.jsonl` file or a directory of
/// VOC-style `.xml` files (page_id = file stem, files visited in name order).
pub fn load_pages(path: &Path) -> Result<(Dataset, ParseStats), IngestError> {
    if path.is_dir() {
        let mut xml_files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| IngestError::Io { path: path.display().to_string(), source: e })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("xml"))
            })
            .collect();
        xml_files.sort();
        let mut dataset = Dataset::default();
        let mut stats = ParseStats::default();
        let mut seen = HashSet::new();
        for file in xml_files {
            let stem = file
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let text = read_to_string(&file)?;
            let label = file.display().to_string();
            let (record, file_stats) = parse_voc_xml(&text, &stem, &label)?;
            if !seen.insert(record.page_id.clone()) {
                return Err(IngestError::DuplicatePageId {
                    source_name: label,
                    line: 1,
                    page_id: record.page_id,
                });
            }
            stats.clipped_boxes += file_stats.clipped_boxes;
            dataset.pages.push(record);
        }
        Ok((dataset, stats))
    } else {
        let is_jsonl = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("jsonl"));
        if !is_jsonl {
            return Err(IngestError::UnsupportedInput {
                path: path.display().to_string(),
                expected: "a .jsonl file or a directory of .xml files".to_string(),
            });
        }
        let text = read_to_string(path)?;
        parse_pages_jsonl(&text, &path.display().to_string())
    }
}

/// Loads detections from a `.jsonl` file.
pub fn load_detections(path: &Path) -> Result<Vec<Detection>, IngestError> {
    let text = read_to_string(path)?;
    parse_detections_jsonl(&text, &path.display().to_string())
}

/// Integer luma for an RGB pixel: round(0.299 R + 0.587 G + 0.114 B),
/// computed in integer arithmetic so every platform agrees on the byte.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Decodes a PNG into grayscale via the integer luma rule.
pub fn decode_png(bytes: &[u8], source_name: &str) -> Result<GrayImage, IngestError> {
    let dynamic = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| IngestError::MalformedImage { source_name: source_name.to_string(), msg: e.to_string() })?;
    let rgb = dynamic.to_rgb8();
    let (width, height) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect();
    Ok(GrayImage { width, height, pixels })
}

/// Parses a binary PGM (`P5`, maxval <= 255). Sample bytes are kept raw.
pub fn parse_pgm(bytes: &[u8], source_name: &str) -> Result<GrayImage, IngestError> {
    let err = |msg: &str| IngestError::MalformedImage {
        source_name: source_name.to_string(),
        msg: msg.to_string(),
    };
    let mut pos = 0usize;
    // PGM headers allow `#` comments between tokens; the raster starts after
    // exactly one whitespace byte following maxval.
    let mut next_token = |bytes: &[u8]| -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if next_token(bytes).as_deref() != Some("P5") {
        return Err(err("missing P5 magic"));
    }
    let mut dim = |what: &str| -> Result<u32, IngestError> {
        next_token(bytes)
            .and_then(|t| t.parse::<u32>().ok())
            .ok_or_else(|| err(&format!("invalid {what}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let maxval = dim("maxval")?;
    if width == 0 || height == 0 {
        return Err(err("zero dimension"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(err("unsupported maxval (only 8-bit PGM is supported)"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing whitespace before raster"));
    }
    pos += 1;
    let expected = width as usize * height as usize;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(err(&format!("truncated raster: expected {expected} bytes, found {}", raster.len())));
    }
    Ok(GrayImage { width, height, pixels: raster[..expected].to_vec() })
}

/// Encodes a binary PGM (`P5`, maxval 255).
pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

/// Loads a page bitmap, dispatching on the file extension (.png or .pgm).
pub fn load_gray_image(path: &Path) -> Result<GrayImage, IngestError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = std::fs::read(path)
        .map_err(|e| IngestError::Io { path: path.display().to_string(), source: e })?;
    let label = path.display().to_string();
    match ext.as_str() {
        "png" => decode_png(&bytes, &label),
        "pgm" => parse_pgm(&bytes, &label),
        _ => Err(IngestError::UnsupportedInput {
            path: label,
            expected: ".png or .pgm page bitmap".to_string(),
        }),
    }
}

/// Scale for the input size policy: pages are shrunk uniformly so width
/// fits 1024 and height fits 800; small pages are never enlarged.
pub fn resize_scale(width: u32, height: u32) -> f64 {
    (MAX_PAGE_WIDTH / width as f64)
        .min(MAX_PAGE_HEIGHT / height as f64)
        .min(1.0)
}

fn resize_gray(image: &GrayImage, new_width: u32, new_height: u32) -> GrayImage {
    let mut out = GrayImage::new(new_width, new_height, 0);
    let sx = image.width as f64 / new_width as f64;
    let sy = image.height as f64 / new_height as f64;
    for y in 0..new_height {
        let src_y = (((y as f64 + 0.5) * sy) as u32).min(image.height - 1);
        for x in 0..new_width {
            let src_x = (((x as f64 + 0.5) * sx) as u32).min(image.width - 1);
            out.set(x, y, image.get(src_x, src_y));
        }
    }
    out
}

/// Applies the resize policy to a record and (optionally) its bitmap.
/// Returns the scaled copies plus the scale used; a scale of 1 returns
/// bit-identical clones, which makes the policy idempotent.
pub fn apply_resize_policy(
    record: &PageRecord,
    image: Option<&GrayImage>,
) -> (PageRecord, Option<GrayImage>, f64) {
    let s = resize_scale(record.width, record.height);
    if s >= 1.0 {
        return (record.clone(), image.cloned(), 1.0);
    }
    let new_width = ((record.width as f64 * s).round() as u32).max(1);
    let new_height = ((record.height as f64 * s).round() as u32).max(1);
    let scale_boxes = |boxes: &[BBox]| -> Vec<BBox> {
        boxes
            .iter()
            .map(|b| {
                let scaled = BBox::new(b.x_min * s, b.y_min * s, b.x_max * s, b.y_max * s);
                clip_box(&scaled, new_width as f64, new_height as f64)
            })
            .collect()
    };
    let scaled_record = PageRecord {
        page_id: record.page_id.clone(),
        image_path: record.image_path.clone(),
        width: new_width,
        height: new_height,
        rows: scale_boxes(&record.rows),
        columns: scale_boxes(&record.columns),
    };
    let scaled_image = image.map(|img| {
        let w = ((img.width as f64 * s).round() as u32).max(1);
        let h = ((img.height as f64 * s).round() as u32).max(1);
        resize_gray(img, w, h)
    });
    (scaled_record, scaled_image, s)
}
