//! Visual output: an SVG gallery of anchor shapes and PNG page overlays
//! with ground-truth and detection outlines.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use crate::anchors::AnchorSet;
use crate::geometry::BBox;
use crate::ingest::GrayImage;

/// Outline colors, chosen apart so overlapping boxes stay readable.
pub const GT_COLOR: [u8; 3] = [0, 170, 0];
pub const RAW_COLOR: [u8; 3] = [220, 40, 40];
pub const REFINED_COLOR: [u8; 3] = [40, 90, 220];

const GALLERY_SIDE: f64 = 640.0;
const GALLERY_SPAN: f64 = 600.0;
const STROKES: [&str; 7] =
    ["#1b6ca8", "#c0392b", "#1e8449", "#8e44ad", "#d68910", "#117a8b", "#5d6d7e"];

/// SVG gallery of an anchor set: every shape drawn co-centered, scaled so
/// the largest dimension spans 600 of the 640-unit canvas. Exactly one
/// `<rect>` per anchor, strokes cycling through a fixed palette, so the
/// output is byte-stable for equal inputs.
pub fn render_anchor_gallery(set: &AnchorSet) -> String {
    let max_dim = set
        .shapes
        .iter()
        .map(|s| s.width.max(s.height))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let scale = GALLERY_SPAN / max_dim;
    let center = GALLERY_SIDE / 2.0;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {side} {side}\" \
         width=\"{side}\" height=\"{side}\">\n",
        side = GALLERY_SIDE as u32,
    ));
    for (i, s) in set.shapes.iter().enumerate() {
        let w = s.width * scale;
        let h = s.height * scale;
        out.push_str(&format!(
            "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
             fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            center - w / 2.0,
            center - h / 2.0,
            w,
            h,
            STROKES[i % STROKES.len()],
        ));
    }
    out.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\" \
         font-family=\"monospace\" font-size=\"14\">{} anchors ({})</text>\n",
        center,
        GALLERY_SIDE - 8.0,
        set.shapes.len(),
        set.provenance.as_str(),
    ));
    out.push_str("</svg>\n");
    out
}

fn draw_outline(img: &mut RgbImage, b: &BBox, color: [u8; 3]) {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let x0 = (b.x_min.round() as i64).clamp(0, w);
    let x1 = (b.x_max.round() as i64).clamp(0, w);
    let y0 = (b.y_min.round() as i64).clamp(0, h);
    let y1 = (b.y_max.round() as i64).clamp(0, h);
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    let px = Rgb(color);
    for x in x0..x1 {
        img.put_pixel(x as u32, y0 as u32, px);
        img.put_pixel(x as u32, (y1 - 1) as u32, px);
    }
    for y in y0..y1 {
        img.put_pixel(x0 as u32, y as u32, px);
        img.put_pixel((x1 - 1) as u32, y as u32, px);
    }
}

/// Draws 1 px box outlines over the page and encodes the result as PNG.
/// Ground truth comes out green, raw detections red, refined detections
/// blue, painted in that order so refinement stays visible on top. Boxes
/// are clipped to the page.
pub fn render_overlay(
    page: &GrayImage,
    gt: &[BBox],
    raw: &[BBox],
    refined: &[BBox],
) -> Vec<u8> {
    let mut img = RgbImage::from_fn(page.width, page.height, |x, y| {
        let v = page.get(x, y);
        Rgb([v, v, v])
    });
    for b in gt {
        draw_outline(&mut img, b, GT_COLOR);
    }
    for b in raw {
        draw_outline(&mut img, b, RAW_COLOR);
    }
    for b in refined {
        draw_outline(&mut img, b, REFINED_COLOR);
    }
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .expect("in-memory PNG encode cannot fail");
    bytes
}
