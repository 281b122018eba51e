//! Axis-aligned boxes, anchor shapes, and IoU arithmetic.

use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixel coordinates, corner-anchored:
/// `x_min <= x_max`, `y_min <= y_max`, all coordinates finite.
/// Zero width or height is allowed (degenerate box).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Anchor dimensions without a position: `width > 0`, `height > 0`, finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Shape {
    pub width: f64,
    pub height: f64,
}

impl Shape {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

impl From<[f64; 2]> for Shape {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Shape> for [f64; 2] {
    fn from(s: Shape) -> Self {
        [s.width, s.height]
    }
}

/// Intersection over union of two boxes. Ranges over [0, 1]; any pair
/// involving a zero-area box (or an empty union) yields 0, never NaN.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU of two shapes placed concentrically: the intersection of co-centered
/// rectangles is `min(width) * min(height)`.
pub fn shape_iou(a: &Shape, b: &Shape) -> f64 {
    let inter = a.width.min(b.width) * a.height.min(b.height);
    inter / (a.area() + b.area() - inter)
}

/// Clustering distance between shapes: `1 - shape_iou`. Positive dimensions
/// guarantee a strictly positive IoU, so the range is [0, 1).
pub fn shape_distance(a: &Shape, b: &Shape) -> f64 {
    1.0 - shape_iou(a, b)
}

/// Clamps a box to the page rectangle `[0, width] x [0, height]`.
/// Clamping preserves coordinate ordering.
pub fn clip_box(b: &BBox, page_width: f64, page_height: f64) -> BBox {
    BBox::new(
        b.x_min.clamp(0.0, page_width),
        b.y_min.clamp(0.0, page_height),
        b.x_max.clamp(0.0, page_width),
        b.y_max.clamp(0.0, page_height),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Prng;

    #[test]
    fn iou_identical_boxes() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_half_overlap() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_disjoint_and_edge_touching() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let apart = BBox::new(20.0, 0.0, 30.0, 10.0);
        let touching = BBox::new(10.0, 0.0, 20.0, 10.0);
        assert_eq!(iou(&a, &apart), 0.0);
        assert_eq!(iou(&a, &touching), 0.0);
    }

    #[test]
    fn iou_zero_area_is_zero() {
        let line = BBox::new(5.0, 5.0, 5.0, 9.0);
        let square = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&line, &square), 0.0);
        assert_eq!(iou(&line, &line), 0.0);
    }

    #[test]
    fn shape_iou_examples() {
        assert!((shape_iou(&Shape::new(2.0, 2.0), &Shape::new(4.0, 4.0)) - 0.25).abs() < 1e-12);
        // inter 2*2 = 4, union 20 + 20 - 4 = 36
        assert!((shape_iou(&Shape::new(10.0, 2.0), &Shape::new(2.0, 10.0)) - 1.0 / 9.0).abs() < 1e-12);
        let s = Shape::new(37.5, 4.25);
        assert_eq!(shape_iou(&s, &s), 1.0);
    }

    #[test]
    fn shape_distance_range() {
        let a = Shape::new(1.0, 1000.0);
        let b = Shape::new(1000.0, 1.0);
        let d = shape_distance(&a, &b);
        assert!(d > 0.0 && d < 1.0);
        assert_eq!(shape_distance(&a, &a), 0.0);
    }

    #[test]
    fn clip_box_example() {
        let b = BBox::new(-5.0, -5.0, 50.0, 50.0);
        let c = clip_box(&b, 40.0, 40.0);
        assert_eq!(c, BBox::new(0.0, 0.0, 40.0, 40.0));
    }

    // Counts grid cells instead of multiplying edge lengths: an independent
    // route to the same ratio. Exact for integer-cornered boxes, so the 0.02
    // tolerance has no slack to hide an implementation error.
    fn rasterized_iou(a: &BBox, b: &BBox, grid: u32) -> f64 {
        let inside = |bx: &BBox, x: u32, y: u32| {
            let (x, y) = (x as f64, y as f64);
            x >= bx.x_min && x + 1.0 <= bx.x_max && y >= bx.y_min && y + 1.0 <= bx.y_max
        };
        let mut inter = 0u64;
        let mut union = 0u64;
        for y in 0..grid {
            for x in 0..grid {
                let in_a = inside(a, x, y);
                let in_b = inside(b, x, y);
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn iou_matches_pixel_counting_oracle() {
        let mut rng = Prng::new(0x1000_0001);
        for _ in 0..1000 {
            let mut corners = || {
                let lo = rng.range_u32(0, 199);
                let hi = rng.range_u32(lo + 1, 200);
                (lo as f64, hi as f64)
            };
            let (ax0, ax1) = corners();
            let (ay0, ay1) = corners();
            let (bx0, bx1) = corners();
            let (by0, by1) = corners();
            let a = BBox::new(ax0, ay0, ax1, ay1);
            let b = BBox::new(bx0, by0, bx1, by1);
            let analytic = iou(&a, &b);
            let counted = rasterized_iou(&a, &b, 200);
            assert!(
                (analytic - counted).abs() <= 0.02,
                "iou mismatch: analytic {analytic} counted {counted} for {a:?} vs {b:?}"
            );
        }
    }
}
