//! Pixel-space geometry shared by the grounding generators.
//!
//! Conventions: origin top-left, `x` rightward, `y` downward. Boxes are
//! inclusive pixel sets. Normalized coordinates live on the integer grid
//! `[0, 1000]` with `(side - 1)` as the denominator, so corner pixels map to
//! exactly 0 and 1000. Rounding is half away from zero.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NORM_MAX: u32 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("mask has no foreground pixel")]
    EmptyMask,
    #[error("point ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds { x: i64, y: i64, width: u32, height: u32 },
    #[error("invalid mask dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("mask data length {got} does not match {width}x{height}")]
    LengthMismatch { got: usize, width: u32, height: u32 },
    #[error("run-length counts sum to {got}, expected {expected}")]
    RleLength { got: u64, expected: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDimensions { width, height });
        }
        if bits.len() != width as usize * height as usize {
            return Err(GeometryError::LengthMismatch { got: bits.len(), width, height });
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(width, height, vec![false; width as usize * height as usize])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, GeometryError> {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = (y * self.width + x) as usize;
        self.bits[i] = value;
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Row-major run lengths, alternating background/foreground, starting
    /// with a (possibly zero) background run.
    pub fn to_rle(&self) -> Vec<u32> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    pub fn from_rle(width: u32, height: u32, counts: &[u32]) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDimensions { width, height });
        }
        let expected = width as u64 * height as u64;
        let got: u64 = counts.iter().map(|&c| c as u64).sum();
        if got != expected {
            return Err(GeometryError::RleLength { got, expected });
        }
        let mut bits = Vec::with_capacity(expected as usize);
        let mut value = false;
        for &c in counts {
            bits.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        Self::new(width, height, bits)
    }

    fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point2D {
    pub x: u32,
    pub y: u32,
}

impl Point2D {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max);
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn area(&self) -> u64 {
        (self.x_max - self.x_min + 1) as u64 * (self.y_max - self.y_min + 1) as u64
    }

    pub fn contains(&self, p: Point2D) -> bool {
        (self.x_min..=self.x_max).contains(&p.x) && (self.y_min..=self.y_max).contains(&p.y)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min <= x_max && y_min <= y_max).then_some(BBox { x_min, y_min, x_max, y_max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormCoord {
    pub x: u32,
    pub y: u32,
}

impl NormCoord {
    pub fn new(x: u32, y: u32) -> Option<Self> {
        (x <= NORM_MAX && y <= NORM_MAX).then_some(Self { x, y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl NormBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Option<Self> {
        (x1.max(y1).max(x2).max(y2) <= NORM_MAX).then_some(Self { x1, y1, x2, y2 })
    }
}

/// Minimal axis-aligned box enclosing every foreground pixel.
pub fn mask_to_bbox(mask: &PixelMask) -> Result<BBox, GeometryError> {
    let mut fg = mask.foreground();
    let (x0, y0) = fg.next().ok_or(GeometryError::EmptyMask)?;
    let init = BBox { x_min: x0, y_min: y0, x_max: x0, y_max: y0 };
    Ok(fg.fold(init, |b, (x, y)| BBox {
        x_min: b.x_min.min(x),
        y_min: b.y_min.min(y),
        x_max: b.x_max.max(x),
        y_max: b.y_max.max(y),
    }))
}

/// Uniform draw over foreground pixels.
pub fn sample_point_in_mask<R: Rng + ?Sized>(
    mask: &PixelMask,
    rng: &mut R,
) -> Result<Point2D, GeometryError> {
    let n = mask.foreground_count();
    if n == 0 {
        return Err(GeometryError::EmptyMask);
    }
    let k = rng.random_range(0..n);
    let (x, y) = mask.foreground().nth(k).expect("k < foreground count");
    Ok(Point2D { x, y })
}

/// Foreground pixel nearest to the mask centroid (ties: first in row-major
/// order). Always a foreground pixel, even for non-convex masks.
pub fn centroid_point(mask: &PixelMask) -> Result<Point2D, GeometryError> {
    let (mut sx, mut sy, mut n) = (0f64, 0f64, 0usize);
    for (x, y) in mask.foreground() {
        sx += x as f64;
        sy += y as f64;
        n += 1;
    }
    if n == 0 {
        return Err(GeometryError::EmptyMask);
    }
    let (cx, cy) = (sx / n as f64, sy / n as f64);
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for (x, y) in mask.foreground() {
        let d = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        if d < best_d {
            best_d = d;
            best = Some(Point2D { x, y });
        }
    }
    Ok(best.expect("non-empty"))
}

/// Intersection over union of two inclusive pixel boxes.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

fn check_point(p: Point2D, width: u32, height: u32) -> Result<(), GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::InvalidDimensions { width, height });
    }
    if p.x >= width || p.y >= height {
        return Err(GeometryError::OutOfBounds {
            x: p.x as i64,
            y: p.y as i64,
            width,
            height,
        });
    }
    Ok(())
}

fn norm_axis(v: u32, side: u32) -> u32 {
    if side == 1 {
        return 0;
    }
    // f64::round rounds half away from zero.
    (v as f64 / (side - 1) as f64 * NORM_MAX as f64).round() as u32
}

fn denorm_axis(v: u32, side: u32) -> u32 {
    if side == 1 {
        return 0;
    }
    (v as f64 / NORM_MAX as f64 * (side - 1) as f64).round() as u32
}

pub fn normalize_point(p: Point2D, width: u32, height: u32) -> Result<NormCoord, GeometryError> {
    check_point(p, width, height)?;
    Ok(NormCoord { x: norm_axis(p.x, width), y: norm_axis(p.y, height) })
}

pub fn denormalize_point(n: NormCoord, width: u32, height: u32) -> Result<Point2D, GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::InvalidDimensions { width, height });
    }
    if n.x > NORM_MAX || n.y > NORM_MAX {
        return Err(GeometryError::OutOfBounds {
            x: n.x as i64,
            y: n.y as i64,
            width: NORM_MAX + 1,
            height: NORM_MAX + 1,
        });
    }
    Ok(Point2D { x: denorm_axis(n.x, width), y: denorm_axis(n.y, height) })
}

pub fn normalize_bbox(b: &BBox, width: u32, height: u32) -> Result<NormBox, GeometryError> {
    let p1 = normalize_point(Point2D::new(b.x_min, b.y_min), width, height)?;
    let p2 = normalize_point(Point2D::new(b.x_max, b.y_max), width, height)?;
    Ok(NormBox { x1: p1.x, y1: p1.y, x2: p2.x, y2: p2.y })
}

pub fn denormalize_bbox(n: &NormBox, width: u32, height: u32) -> Result<BBox, GeometryError> {
    let p1 = denormalize_point(NormCoord { x: n.x1, y: n.y1 }, width, height)?;
    let p2 = denormalize_point(NormCoord { x: n.x2, y: n.y2 }, width, height)?;
    Ok(BBox { x_min: p1.x, y_min: p1.y, x_max: p2.x, y_max: p2.y })
}

/// Interchange record for run-length encoded masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleMaskRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
    pub quality_score: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::seed::SeedScheme;
    use proptest::prelude::*;

    fn scan_bbox(m: &PixelMask) -> Option<(u32, u32, u32, u32)> {
        let mut out: Option<(u32, u32, u32, u32)> = None;
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.bits()[(y * m.width() + x) as usize] {
                    out = Some(match out {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        out
    }

    #[test]
    fn single_pixel_bbox() {
        let m = PixelMask::from_fn(8, 8, |x, y| x == 3 && y == 5).unwrap();
        assert_eq!(mask_to_bbox(&m).unwrap(), BBox::new(3, 5, 3, 5));
    }

    #[test]
    fn full_mask_bbox() {
        let m = PixelMask::from_fn(4, 4, |_, _| true).unwrap();
        assert_eq!(mask_to_bbox(&m).unwrap(), BBox::new(0, 0, 3, 3));
    }

    #[test]
    fn empty_mask_errors() {
        let m = PixelMask::empty(5, 5).unwrap();
        assert_eq!(mask_to_bbox(&m), Err(GeometryError::EmptyMask));
        let mut rng = SeedScheme::new(0).rng("t", 0);
        assert_eq!(sample_point_in_mask(&m, &mut rng), Err(GeometryError::EmptyMask));
        assert_eq!(centroid_point(&m), Err(GeometryError::EmptyMask));
    }

    #[test]
    fn bad_dimensions_rejected() {
        assert!(PixelMask::new(0, 3, vec![]).is_err());
        assert!(PixelMask::new(2, 2, vec![true; 3]).is_err());
        assert!(PixelMask::from_rle(2, 2, &[1, 2]).is_err());
    }

    #[test]
    fn sample_single_pixel() {
        let m = PixelMask::from_fn(10, 4, |x, y| x == 7 && y == 2).unwrap();
        let mut rng = SeedScheme::new(1).rng("t", 0);
        assert_eq!(sample_point_in_mask(&m, &mut rng).unwrap(), Point2D::new(7, 2));
    }

    #[test]
    fn sample_two_pixels_is_balanced() {
        let m = PixelMask::from_fn(6, 6, |x, y| (x, y) == (1, 1) || (x, y) == (4, 5)).unwrap();
        let mut rng = SeedScheme::new(2024).rng("t", 0);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| sample_point_in_mask(&m, &mut rng).unwrap() == Point2D::new(1, 1))
            .count();
        let f = hits as f64 / n as f64;
        assert!((0.47..=0.53).contains(&f), "frequency {f}");
    }

    #[test]
    fn sample_is_deterministic() {
        let m = PixelMask::from_fn(32, 32, |x, y| (x + y) % 3 == 0).unwrap();
        let a = sample_point_in_mask(&m, &mut SeedScheme::new(9).rng("t", 3)).unwrap();
        let b = sample_point_in_mask(&m, &mut SeedScheme::new(9).rng("t", 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn centroid_of_ring_is_foreground() {
        let m = PixelMask::from_fn(21, 21, |x, y| {
            let d = (x as i32 - 10).pow(2) + (y as i32 - 10).pow(2);
            (49..=81).contains(&d)
        })
        .unwrap();
        let p = centroid_point(&m).unwrap();
        assert!(m.get(p.x, p.y));
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(2, 3, 9, 7);
        assert_eq!(bbox_iou(&a, &a), 1.0);
        assert_eq!(bbox_iou(&BBox::new(0, 0, 1, 1), &BBox::new(5, 5, 6, 6)), 0.0);
        assert_eq!(bbox_iou(&BBox::new(0, 0, 1, 1), &BBox::new(1, 1, 2, 2)), 1.0 / 7.0);
    }

    #[test]
    fn iou_matches_pixel_grid_count() {
        let boxes = [BBox::new(0, 0, 1, 1), BBox::new(1, 1, 2, 2), BBox::new(0, 1, 4, 3)];
        for a in &boxes {
            for b in &boxes {
                let (mut i, mut u) = (0, 0);
                for y in 0..6 {
                    for x in 0..6 {
                        let p = Point2D::new(x, y);
                        let (ia, ib) = (a.contains(p), b.contains(p));
                        i += (ia && ib) as u32;
                        u += (ia || ib) as u32;
                    }
                }
                assert_eq!(bbox_iou(a, b), i as f64 / u as f64);
            }
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_point(Point2D::new(500, 0), 1001, 1).unwrap(), NormCoord { x: 500, y: 0 });
        assert_eq!(
            normalize_point(Point2D::new(224, 224), 448, 448).unwrap(),
            NormCoord { x: 501, y: 501 }
        );
        assert_eq!(normalize_point(Point2D::new(447, 0), 448, 10).unwrap().x, 1000);
        assert!(matches!(
            normalize_point(Point2D::new(448, 0), 448, 448),
            Err(GeometryError::OutOfBounds { .. })
        ));
        assert!(denormalize_point(NormCoord { x: 1001, y: 0 }, 10, 10).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // 1/2 * 1000 / 1000 on a 3-pixel axis: 1 -> 500 exactly; 0.5 cases via denorm.
        assert_eq!(denorm_axis(500, 2), 1); // 0.5 rounds up
        assert_eq!(denorm_axis(250, 3), 1); // 0.5 rounds up
        assert_eq!(norm_axis(1, 2001), 1); // 0.5 rounds up
    }

    #[test]
    fn normalize_bbox_full_image() {
        let b = BBox::new(0, 0, 639, 479);
        assert_eq!(normalize_bbox(&b, 640, 480).unwrap(), NormBox { x1: 0, y1: 0, x2: 1000, y2: 1000 });
        assert_eq!(denormalize_bbox(&NormBox { x1: 0, y1: 0, x2: 1000, y2: 1000 }, 640, 480).unwrap(), b);
    }

    #[test]
    fn rle_layout_starts_with_background() {
        let m = PixelMask::new(3, 1, vec![true, true, false]).unwrap();
        assert_eq!(m.to_rle(), vec![0, 2, 1]);
        let m = PixelMask::new(2, 2, vec![false, true, true, false]).unwrap();
        assert_eq!(m.to_rle(), vec![1, 2, 1]);
    }

    fn arb_mask() -> impl Strategy<Value = PixelMask> {
        (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
            prop::collection::vec(any::<bool>(), (w * h) as usize)
                .prop_map(move |bits| PixelMask::new(w, h, bits).unwrap())
        })
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..20, 0u32..20, 0u32..10, 0u32..10)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn bbox_matches_scan(m in arb_mask()) {
            match scan_bbox(&m) {
                None => prop_assert_eq!(mask_to_bbox(&m), Err(GeometryError::EmptyMask)),
                Some((a, b, c, d)) => prop_assert_eq!(mask_to_bbox(&m).unwrap(), BBox::new(a, b, c, d)),
            }
        }

        #[test]
        fn sampled_points_are_foreground(m in arb_mask(), seed in any::<u64>()) {
            let mut rng = SeedScheme::new(seed).rng("p", 0);
            if let Ok(p) = sample_point_in_mask(&m, &mut rng) {
                prop_assert!(m.get(p.x, p.y));
            }
        }

        #[test]
        fn rle_round_trip(m in arb_mask()) {
            let counts = m.to_rle();
            prop_assert_eq!(counts.iter().map(|&c| c as u64).sum::<u64>(), m.bits().len() as u64);
            prop_assert_eq!(PixelMask::from_rle(m.width(), m.height(), &counts).unwrap(), m);
        }

        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = bbox_iou(&a, &b);
            prop_assert_eq!(ab, bbox_iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(bbox_iou(&a, &a), 1.0);
        }

        #[test]
        fn iou_monotone_when_intersection_shrinks(a in arb_box(), b in arb_box()) {
            // Shrinking b to its overlap with a can only raise IoU; sliding the
            // overlap away (fixed areas) can only lower it.
            if let Some(i) = a.intersection(&b) {
                prop_assert!(bbox_iou(&a, &i) >= bbox_iou(&a, &b));
                let moved = BBox::new(b.x_min + 1, b.y_min, b.x_max + 1, b.y_max);
                if b.x_min >= a.x_min {
                    prop_assert!(bbox_iou(&a, &moved) <= bbox_iou(&a, &b));
                }
            }
        }
    }
}
