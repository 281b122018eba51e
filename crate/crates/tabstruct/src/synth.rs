//! Deterministic synthetic table pages with pixel-exact ground truth, plus
//! seeded detection perturbation for end-to-end pipeline tests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::ingest::{Detection, GrayImage, ObjectClass, PageRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("layout overflow: {0}")]
    LayoutOverflow(String),
}

/// SplitMix64 mixing step (Steele, Lea, Flood 2014 constants). Used for
/// seeding and per-page seed derivation so nearby seeds diverge.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xorshift64* generator: shift triple (12, 25, 27), output multiplier
/// 0x2545F4914F6CDD1D (Vigna 2016). The seed passes through [`splitmix64`]
/// once; a zero state is replaced by the golden-ratio constant because
/// xorshift has a fixed point at zero.
///
/// The algorithm is part of this crate's contract: any reimplementation with
/// these exact constants reproduces every synthetic page byte for byte.
#[derive(Debug, Clone)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        let state = splitmix64(seed);
        Self { state: if state == 0 { 0x9E37_79B9_7F4A_7C15 } else { state } }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut s = self.state;
        s ^= s >> 12;
        s ^= s << 25;
        s ^= s >> 27;
        self.state = s;
        s.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [lo, hi). The modulo bias is below 2^-32 for the
    /// small ranges used here.
    pub fn range_u32(&mut self, lo: u32, hi: u32) -> u32 {
        debug_assert!(lo < hi);
        lo + (self.next_u64() % (hi - lo) as u64) as u32
    }
}

/// Per-page seed: `splitmix64(base ^ ((index + 1) * 0x9E3779B97F4A7C15))`.
pub fn derive_page_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Uniform-grid table layout. The page carries a white (255) background and
/// a fixed 12 px outer margin around the table area.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableLayoutSpec {
    pub n_rows: u32,
    pub n_cols: u32,
    pub page_width: u32,
    pub page_height: u32,
    /// Blank border inside each cell; ink never enters it.
    pub cell_pad: u32,
    pub row_gap: u32,
    pub col_gap: u32,
    /// Intensity painted for ink; must differ from the 255 background.
    #[serde(default)]
    pub ink_intensity: u8,
    /// Draw 1 px table borders and cell separators inside the gaps.
    #[serde(default)]
    pub draw_rulings: bool,
    pub seed: u64,
}

/// Detection perturbation: row x-edges jittered, columns passed through,
/// every emitted box subject to independent dropping.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    /// Half-width of the uniform x-edge noise, as a fraction of box width.
    #[serde(default = "default_jitter")]
    pub width_jitter_frac: f64,
    #[serde(default)]
    pub drop_prob: f64,
    pub seed: u64,
}

fn default_jitter() -> f64 {
    0.15
}

const MARGIN: u32 = 12;
const BACKGROUND: u8 = 255;
const MIN_WORD_WIDTH: u32 = 4;
const MIN_WORD_HEIGHT: u32 = 2;

struct GridGeometry {
    cell_w: u32,
    cell_h: u32,
    inner_w: u32,
    inner_h: u32,
}

fn solve_grid(spec: &TableLayoutSpec) -> Result<GridGeometry, SynthError> {
    if spec.n_rows == 0 || spec.n_cols == 0 {
        return Err(SynthError::InvalidSpec("n_rows and n_cols must be >= 1".into()));
    }
    if spec.ink_intensity == BACKGROUND {
        return Err(SynthError::InvalidSpec("ink_intensity must differ from the 255 background".into()));
    }
    let overflow = |what: &str| SynthError::LayoutOverflow(format!(
        "{} x {} grid does not fit a {} x {} page ({what})",
        spec.n_rows, spec.n_cols, spec.page_width, spec.page_height,
    ));
    let avail_w = spec
        .page_width
        .checked_sub(2 * MARGIN)
        .and_then(|w| w.checked_sub((spec.n_cols - 1) * spec.col_gap))
        .ok_or_else(|| overflow("margins and column gaps exceed the page width"))?;
    let avail_h = spec
        .page_height
        .checked_sub(2 * MARGIN)
        .and_then(|h| h.checked_sub((spec.n_rows - 1) * spec.row_gap))
        .ok_or_else(|| overflow("margins and row gaps exceed the page height"))?;
    let cell_w = avail_w / spec.n_cols;
    let cell_h = avail_h / spec.n_rows;
    let inner_w = cell_w.saturating_sub(2 * spec.cell_pad);
    let inner_h = cell_h.saturating_sub(2 * spec.cell_pad);
    if inner_w < MIN_WORD_WIDTH || inner_h < MIN_WORD_HEIGHT {
        return Err(overflow("cells leave no room for ink after padding"));
    }
    Ok(GridGeometry { cell_w, cell_h, inner_w, inner_h })
}

fn fill_rect(image: &mut GrayImage, x0: u32, y0: u32, w: u32, h: u32, value: u8) {
    let x1 = (x0 + w).min(image.width);
    let y1 = (y0 + h).min(image.height);
    for y in y0..y1 {
        for x in x0..x1 {
            image.set(x, y, value);
        }
    }
}

/// Ink extent of a horizontal pixel band, spanning the full image width.
fn band_extent_rows(image: &GrayImage, y0: u32, y1: u32) -> Option<BBox> {
    let mut min_x = u32::MAX;
    let mut max_x = 0u32;
    let mut min_y = u32::MAX;
    let mut max_y = 0u32;
    for y in y0..y1.min(image.height) {
        for x in 0..image.width {
            if image.get(x, y) != BACKGROUND {
                min_x = min_x.min(x);
                max_x = max_x.max(x);
                min_y = min_y.min(y);
                max_y = max_y.max(y);
            }
        }
    }
    (min_x != u32::MAX).then(|| {
        BBox::new(min_x as f64, min_y as f64, (max_x + 1) as f64, (max_y + 1) as f64)
    })
}

/// Ink extent of a vertical pixel band, spanning the full image height.
fn band_extent_cols(image: &GrayImage, x0: u32, x1: u32) -> Option<BBox> {
    let mut min_x = u32::MAX;
    let mut max_x = 0u32;
    let mut min_y = u32::MAX;
    let mut max_y = 0u32;
    for y in 0..image.height {
        for x in x0..x1.min(image.width) {
            if image.get(x, y) != BACKGROUND {
                min_x = min_x.min(x);
                max_x = max_x.max(x);
                min_y = min_y.min(y);
                max_y = max_y.max(y);
            }
        }
    }
    (min_x != u32::MAX).then(|| {
        BBox::new(min_x as f64, min_y as f64, (max_x + 1) as f64, (max_y + 1) as f64)
    })
}

/// Renders one synthetic page. Cells hold 1-3 "words" (filled rectangles at
/// least 4x2 px, so with the default ink threshold every word column clears
/// a black-pixel count of 2). Ground-truth row and column boxes are measured
/// back from the rendered bitmap: each is the exact ink extent of its grid
/// band, which makes generated pages self-consistent oracles for refinement.
pub fn generate_page(spec: &TableLayoutSpec, page_id: &str) -> Result<(GrayImage, PageRecord), SynthError> {
    let grid = solve_grid(spec)?;
    let mut image = GrayImage::new(spec.page_width, spec.page_height, BACKGROUND);
    let mut rng = Prng::new(spec.seed);

    // Draw order (and therefore PRNG draw order) is row-major over cells;
    // per word: count, then width, height, y offset, gap. Changing this
    // order is a format break for anyone reproducing pages from seeds.
    for r in 0..spec.n_rows {
        for c in 0..spec.n_cols {
            let cell_x = MARGIN + c * (grid.cell_w + spec.col_gap);
            let cell_y = MARGIN + r * (grid.cell_h + spec.row_gap);
            let inner_x = cell_x + spec.cell_pad;
            let inner_y = cell_y + spec.cell_pad;
            let n_words = rng.range_u32(1, 4);
            let mut cursor = 0u32;
            for _ in 0..n_words {
                let remaining = grid.inner_w - cursor;
                if remaining < MIN_WORD_WIDTH {
                    break;
                }
                let max_w = remaining.min(24);
                let word_w = rng.range_u32(MIN_WORD_WIDTH, max_w + 1);
                let max_h = grid.inner_h.min(6);
                let word_h = rng.range_u32(MIN_WORD_HEIGHT, max_h + 1);
                let y_off = rng.range_u32(0, grid.inner_h - word_h + 1);
                fill_rect(&mut image, inner_x + cursor, inner_y + y_off, word_w, word_h, spec.ink_intensity);
                cursor += word_w + rng.range_u32(3, 8);
            }
        }
    }

    let table_x1 = MARGIN + spec.n_cols * grid.cell_w + (spec.n_cols - 1) * spec.col_gap;
    let table_y1 = MARGIN + spec.n_rows * grid.cell_h + (spec.n_rows - 1) * spec.row_gap;
    if spec.draw_rulings {
        let y0 = MARGIN - 1;
        let line_h = table_y1 - MARGIN + 2;
        let x0 = MARGIN - 1;
        let line_w = table_x1 - MARGIN + 2;
        // Borders sit 1 px outside the table area, separators in gap centers.
        fill_rect(&mut image, MARGIN - 1, y0, 1, line_h, spec.ink_intensity);
        fill_rect(&mut image, table_x1, y0, 1, line_h, spec.ink_intensity);
        fill_rect(&mut image, x0, MARGIN - 1, line_w, 1, spec.ink_intensity);
        fill_rect(&mut image, x0, table_y1, line_w, 1, spec.ink_intensity);
        if spec.col_gap >= 1 {
            for c in 1..spec.n_cols {
                let gap_x = MARGIN + c * grid.cell_w + (c - 1) * spec.col_gap;
                fill_rect(&mut image, gap_x + spec.col_gap / 2, y0, 1, line_h, spec.ink_intensity);
            }
        }
        if spec.row_gap >= 1 {
            for r in 1..spec.n_rows {
                let gap_y = MARGIN + r * grid.cell_h + (r - 1) * spec.row_gap;
                fill_rect(&mut image, x0, gap_y + spec.row_gap / 2, line_w, 1, spec.ink_intensity);
            }
        }
    }

    let mut rows = Vec::with_capacity(spec.n_rows as usize);
    for r in 0..spec.n_rows {
        let y0 = MARGIN + r * (grid.cell_h + spec.row_gap);
        let extent = band_extent_rows(&image, y0, y0 + grid.cell_h)
            .expect("every row band contains at least one word");
        rows.push(extent);
    }
    let mut columns = Vec::with_capacity(spec.n_cols as usize);
    for c in 0..spec.n_cols {
        let x0 = MARGIN + c * (grid.cell_w + spec.col_gap);
        let extent = band_extent_cols(&image, x0, x0 + grid.cell_w)
            .expect("every column band contains at least one word");
        columns.push(extent);
    }

    let record = PageRecord {
        page_id: page_id.to_string(),
        image_path: None,
        width: spec.page_width,
        height: spec.page_height,
        rows,
        columns,
    };
    Ok((image, record))
}

/// Simulates a detector whose column boxes are reliable but whose row widths
/// drift: row x-edges get independent uniform noise of half-width
/// `width_jitter_frac * width`, heights stay exact, columns pass through
/// unchanged. Every box is dropped independently with `drop_prob`.
///
/// Scores encode the damage: `1 - (|dx_min| + |dx_max|) / (2 * width)` using
/// post-clamp shifts, so an unperturbed box scores exactly 1.
///
/// PRNG draw order per row box: drop decision, then the two edge shifts
/// (dropped boxes consume only the drop draw); per column box: drop decision.
pub fn perturb_detections(record: &PageRecord, spec: &PerturbSpec) -> Result<Vec<Detection>, SynthError> {
    if !spec.width_jitter_frac.is_finite() || spec.width_jitter_frac < 0.0 {
        return Err(SynthError::InvalidSpec("width_jitter_frac must be finite and >= 0".into()));
    }
    if !(0.0..=1.0).contains(&spec.drop_prob) {
        return Err(SynthError::InvalidSpec("drop_prob must lie in [0, 1]".into()));
    }
    let mut rng = Prng::new(spec.seed);
    let page_w = record.width as f64;
    let mut out = Vec::new();
    for b in &record.rows {
        if rng.uniform() < spec.drop_prob {
            continue;
        }
        let width = b.width();
        let half = spec.width_jitter_frac * width;
        let d_min = (rng.uniform() * 2.0 - 1.0) * half;
        let d_max = (rng.uniform() * 2.0 - 1.0) * half;
        let mut x_min = (b.x_min + d_min).clamp(0.0, page_w);
        let mut x_max = (b.x_max + d_max).clamp(0.0, page_w);
        if x_min > x_max {
            let mid = 0.5 * (x_min + x_max);
            x_min = mid;
            x_max = mid;
        }
        let rel_shift = if width > 0.0 {
            ((x_min - b.x_min).abs() + (x_max - b.x_max).abs()) / (2.0 * width)
        } else {
            0.0
        };
        out.push(Detection {
            page_id: record.page_id.clone(),
            class: ObjectClass::Row,
            bbox: BBox::new(x_min, b.y_min, x_max, b.y_max),
            score: (1.0 - rel_shift).clamp(0.0, 1.0),
        });
    }
    for b in &record.columns {
        if rng.uniform() < spec.drop_prob {
            continue;
        }
        out.push(Detection {
            page_id: record.page_id.clone(),
            class: ObjectClass::Column,
            bbox: *b,
            score: 1.0,
        });
    }
    Ok(out)
}
