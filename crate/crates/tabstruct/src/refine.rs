//! Layout-based box refinement: binarize the page, probe vertical strips for
//! ink, and snap row x-edges to the observed ink extent. Heights are never
//! touched; columns are only refined on request, via the transposed scan.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::ingest::{Detection, GrayImage, ObjectClass};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("detection references page \"{got}\" while refining page \"{expected}\"")]
    PageMismatch { expected: String, got: String },
}

/// One flag per pixel: true means ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    #[inline]
    pub fn ink(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set_ink(&mut self, x: u32, y: u32, ink: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = ink;
    }

    /// Swaps the axes; used to run the row scan over column boxes.
    pub fn transposed(&self) -> Self {
        let mut out = Self::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.ink(x, y) {
                    out.set_ink(y, x, true);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefineMode {
    /// Scan the full width and keep the extreme qualifying columns.
    #[default]
    PaperFaithful,
    /// Scan outward from the box edges, stopping after `gap_limit`
    /// consecutive non-qualifying columns; shrink inward when the edges sit
    /// in blank space.
    GapLimited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams {
    /// A pixel is ink iff its intensity is strictly below this.
    pub intensity_threshold: u8,
    /// Minimum ink pixels in a probe strip for the column to qualify.
    pub black_pixel_threshold: u32,
    /// Probe strip width in columns.
    pub probe_width: u32,
    pub mode: RefineMode,
    /// Only used by [`RefineMode::GapLimited`].
    pub gap_limit: u32,
    /// Optional clamp restricting the scan to a region (e.g. a known table
    /// box). No clamp means the scan covers the full page width.
    pub scan_clamp: Option<BBox>,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            intensity_threshold: 128,
            black_pixel_threshold: 2,
            probe_width: 1,
            mode: RefineMode::PaperFaithful,
            gap_limit: 50,
            scan_clamp: None,
        }
    }
}

/// Ink iff intensity < threshold (strictly; a pixel equal to the threshold
/// is background).
pub fn binarize(image: &GrayImage, threshold: u8) -> BinaryImage {
    let mut out = BinaryImage::new(image.width, image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            if image.get(x, y) < threshold {
                out.set_ink(x, y, true);
            }
        }
    }
    out
}

/// Otsu's threshold over the intensity histogram, returned so that
/// `binarize(image, t)` marks the dark class as ink (ink iff intensity < t).
/// Degenerate (single-intensity) images fall back to 128.
pub fn otsu_threshold(image: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &p in &image.pixels {
        hist[p as usize] += 1;
    }
    let total = image.pixels.len() as f64;
    if total == 0.0 {
        return 128;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &n)| v as f64 * n as f64).sum();
    let mut best_k = None;
    let mut best_var = -1.0f64;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for (k, &count) in hist.iter().enumerate().take(255) {
        w0 += count as f64;
        sum0 += k as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_k = Some(k);
        }
    }
    match best_k {
        Some(k) => (k + 1) as u8,
        None => 128,
    }
}

/// Ink pixels inside the strip `[x, x + probe_width) x [y_min, y_max]`,
/// clipped to the image. The band covers pixel rows `floor(y_min)` up to
/// `ceil(y_max)` (exclusive). Strips fully outside the image count 0.
pub fn column_ink_count(bin: &BinaryImage, x: i64, band: (f64, f64), probe_width: u32) -> u32 {
    let w = bin.width as i64;
    let x0 = x.clamp(0, w);
    let x1 = x.saturating_add(probe_width as i64).clamp(0, w);
    let h = bin.height as f64;
    let y0 = band.0.floor().max(0.0).min(h) as u32;
    let y1 = band.1.ceil().max(0.0).min(h) as u32;
    let mut count = 0u32;
    for y in y0..y1 {
        for col in x0..x1 {
            if bin.ink(col as u32, y) {
                count += 1;
            }
        }
    }
    count
}

/// Qualifying columns found by one outward/inward scan region.
#[derive(Default, Clone, Copy)]
struct FoundRange {
    min: Option<i64>,
    max: Option<i64>,
}

impl FoundRange {
    fn note(&mut self, x: i64) {
        self.min = Some(self.min.map_or(x, |m| m.min(x)));
        self.max = Some(self.max.map_or(x, |m| m.max(x)));
    }
}

/// Snaps a row box's x-edges to the ink extent of its horizontal band.
///
/// The band is the box's own `[y_min, y_max]`; a column qualifies when its
/// probe strip holds at least `black_pixel_threshold` ink pixels. The
/// returned box keeps `y_min` / `y_max` exactly and satisfies
/// `x_min <= x_max`; its x-range is clipped to the image. Boxes whose band
/// misses the image, and scans that find no qualifying column, return the
/// input unchanged. Refining a box a second time with the same parameters
/// leaves it unchanged, provided `gap_limit >= probe_width`.
pub fn refine_row_box(bin: &BinaryImage, bbox: &BBox, params: &RefineParams) -> BBox {
    let band = (bbox.y_min, bbox.y_max);
    let h = bin.height as f64;
    let band_top = band.0.floor().max(0.0).min(h);
    let band_bottom = band.1.ceil().max(0.0).min(h);
    if band_top >= band_bottom {
        return *bbox;
    }
    let (scan_lo, scan_hi) = match &params.scan_clamp {
        None => (0i64, bin.width as i64),
        Some(c) => (
            (c.x_min.floor().max(0.0) as i64).min(bin.width as i64),
            (c.x_max.ceil().min(bin.width as f64).max(0.0)) as i64,
        ),
    };
    if scan_lo >= scan_hi {
        return *bbox;
    }
    let qualifies =
        |x: i64| column_ink_count(bin, x, band, params.probe_width) >= params.black_pixel_threshold;

    let (left_col, right_col) = match params.mode {
        RefineMode::PaperFaithful => {
            let mut range = FoundRange::default();
            for x in scan_lo..scan_hi {
                if qualifies(x) {
                    range.note(x);
                }
            }
            match (range.min, range.max) {
                (Some(lo), Some(hi)) => (lo, hi),
                _ => return *bbox,
            }
        }
        RefineMode::GapLimited => {
            let bl = (bbox.x_min.floor() as i64).clamp(scan_lo, scan_hi);
            let br = (bbox.x_max.ceil() as i64).clamp(scan_lo, scan_hi);
            let mut interior = FoundRange::default();
            for x in bl..br {
                if qualifies(x) {
                    interior.note(x);
                }
            }
            let mut left = FoundRange::default();
            let mut gap = 0u32;
            let mut x = bl - 1;
            while x >= scan_lo && gap < params.gap_limit {
                if qualifies(x) {
                    left.note(x);
                    gap = 0;
                } else {
                    gap += 1;
                }
                x -= 1;
            }
            // The right scan starts at the probe strip ending at the box
            // edge, not the edge itself: the refined edge lands at
            // `last qualifying column + probe_width`, so a rescan anchored
            // there re-qualifies that column and spends its gap budget on
            // columns the first scan already proved blank. Starting at `br`
            // would grant a rescan a fresh budget past the first scan's
            // horizon, letting repeated refinement creep rightward.
            let mut right = FoundRange::default();
            gap = 0;
            x = (br - params.probe_width as i64).max(scan_lo);
            while x < scan_hi && gap < params.gap_limit {
                if qualifies(x) {
                    right.note(x);
                    gap = 0;
                } else {
                    gap += 1;
                }
                x += 1;
            }
            // The fallback chains prefer the region nearest each edge. The
            // right scan may overlap the interior (and, for tiny boxes, the
            // left scan's range), but any qualifying column it finds below
            // `br` is also seen by those scans, so whenever a chain falls
            // through to a farther region the nearer ones were truly empty
            // and `left_col <= right_col` still holds.
            let left_col = left.min.or(interior.min).or(right.min);
            let right_col = right.max.or(interior.max).or(left.max);
            match (left_col, right_col) {
                (Some(lo), Some(hi)) => (lo, hi),
                _ => return *bbox,
            }
        }
    };

    let x_min = left_col as f64;
    let x_max = ((right_col + params.probe_width as i64) as f64).min(bin.width as f64);
    BBox::new(x_min, bbox.y_min, x_max, bbox.y_max)
}

/// Audit record for one refined detection.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineAudit {
    pub page_id: String,
    pub before: BBox,
    pub after: BBox,
    pub delta_x_min: f64,
    pub delta_x_max: f64,
}

/// Refines one page's detections against its bitmap. Row boxes get the band
/// scan; column boxes pass through unchanged unless `refine_columns` is set,
/// in which case they get the same scan on the transposed page. Scores and
/// order are preserved, and the output length always equals the input's.
pub fn refine_detections(
    image: &GrayImage,
    page_id: &str,
    detections: &[Detection],
    params: &RefineParams,
    refine_columns: bool,
) -> Result<(Vec<Detection>, Vec<RefineAudit>), RefineError> {
    for det in detections {
        if det.page_id != page_id {
            return Err(RefineError::PageMismatch {
                expected: page_id.to_string(),
                got: det.page_id.clone(),
            });
        }
    }
    let bin = binarize(image, params.intensity_threshold);
    let needs_transpose =
        refine_columns && detections.iter().any(|d| d.class == ObjectClass::Column);
    let bin_t = needs_transpose.then(|| bin.transposed());
    let params_t = bin_t.as_ref().map(|_| RefineParams {
        scan_clamp: params.scan_clamp.map(transpose_box),
        ..params.clone()
    });

    let mut refined = Vec::with_capacity(detections.len());
    let mut audits = Vec::with_capacity(detections.len());
    for det in detections {
        let after = match det.class {
            ObjectClass::Row => refine_row_box(&bin, &det.bbox, params),
            ObjectClass::Column => match (&bin_t, &params_t) {
                (Some(bt), Some(pt)) => {
                    transpose_box(refine_row_box(bt, &transpose_box(det.bbox), pt))
                }
                _ => det.bbox,
            },
        };
        audits.push(RefineAudit {
            page_id: det.page_id.clone(),
            before: det.bbox,
            after,
            delta_x_min: after.x_min - det.bbox.x_min,
            delta_x_max: after.x_max - det.bbox.x_max,
        });
        refined.push(Detection { bbox: after, ..det.clone() });
    }
    Ok((refined, audits))
}

fn transpose_box(b: BBox) -> BBox {
    BBox::new(b.y_min, b.x_min, b.y_max, b.x_max)
}

#[derive(Serialize, Deserialize)]
struct RawAudit {
    page_id: String,
    before: [f64; 4],
    after: [f64; 4],
    delta_x_min: f64,
    delta_x_max: f64,
}

/// Audit JSONL: one line per refined box, input order.
pub fn write_audit_jsonl(audits: &[RefineAudit]) -> String {
    let mut out = String::new();
    for a in audits {
        let raw = RawAudit {
            page_id: a.page_id.clone(),
            before: a.before.into(),
            after: a.after.into(),
            delta_x_min: a.delta_x_min,
            delta_x_max: a.delta_x_max,
        };
        out.push_str(&serde_json::to_string(&raw).expect("audit serializes"));
        out.push('\n');
    }
    out
}
