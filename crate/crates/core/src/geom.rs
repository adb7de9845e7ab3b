//! Boxes, binary masks, and their overlap measures.
//!
//! Coordinate conventions used across the crate:
//!
//! * Boxes are continuous and half-open, `[x0, x1) x [y0, y1)`, in a frame
//!   where pixel `(row i, col j)` occupies the unit square `[j, j+1) x [i, i+1)`.
//!   Adjacent boxes therefore have IoU exactly 0.
//! * Point annotations (keypoints) use pixel-center-index coordinates:
//!   `x = j` means the center of pixel column `j`, i.e. corner-frame `j + 0.5`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box, half-open, image frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl BBox {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Result<Self> {
        let b = BBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.x0, self.y0, self.x1, self.y1];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
                reason: "non-finite coordinate",
            });
        }
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::InvalidBox {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
                reason: "empty extent (requires x0 < x1 and y0 < y1)",
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f32 {
        (self.width() * self.width() + self.height() * self.height()).sqrt()
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    /// Box grown by `margin` on every side.
    pub fn expanded(&self, margin: f32) -> BBox {
        BBox {
            x0: self.x0 - margin,
            y0: self.y0 - margin,
            x1: self.x1 + margin,
            y1: self.y1 + margin,
        }
    }

    /// Containment test in corner-frame coordinates.
    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersection_area(&self, other: &BBox) -> f32 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }
}

/// Intersection over union of two valid boxes. Symmetric, in [0, 1],
/// and exactly 1 iff the boxes are identical.
pub fn box_iou(a: &BBox, b: &BBox) -> f32 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Binary raster aligned to the image grid, indexed `[row, col]`.
pub type Mask = Array2<bool>;

pub fn mask_count(m: &Mask) -> usize {
    m.iter().filter(|v| **v).count()
}

/// |a AND b| / |a OR b|. Two empty rasters compare equal (IoU 1.0).
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f32> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            context: "mask_iou",
            expected: vec![a.dim().0, a.dim().1],
            got: vec![b.dim().0, b.dim().1],
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f32 / union as f32)
}

/// Tight half-open box around the set pixels of a mask, or `None` if empty.
pub fn mask_bbox(m: &Mask) -> Option<BBox> {
    let (h, w) = m.dim();
    let mut min_r = h;
    let mut max_r = 0usize;
    let mut min_c = w;
    let mut max_c = 0usize;
    let mut any = false;
    for ((r, c), &v) in m.indexed_iter() {
        if v {
            any = true;
            min_r = min_r.min(r);
            max_r = max_r.max(r);
            min_c = min_c.min(c);
            max_c = max_c.max(c);
        }
    }
    if !any {
        return None;
    }
    Some(BBox {
        x0: min_c as f32,
        y0: min_r as f32,
        x1: (max_c + 1) as f32,
        y1: (max_r + 1) as f32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x0: f32, y0: f32, x1: f32, y1: f32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn identical_boxes_iou_one() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(box_iou(&a, &a), 1.0);
    }

    #[test]
    fn disjoint_boxes_iou_zero() {
        assert_eq!(box_iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
    }

    #[test]
    fn adjacent_boxes_iou_zero() {
        assert_eq!(box_iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    /// Counting oracle: rasterize both boxes on a sub-pixel grid and count cells.
    fn grid_iou(a: &BBox, b: &BBox, step: f32) -> f64 {
        let x_lo = a.x0.min(b.x0);
        let y_lo = a.y0.min(b.y0);
        let x_hi = a.x1.max(b.x1);
        let y_hi = a.y1.max(b.y1);
        let nx = ((x_hi - x_lo) / step).ceil() as usize;
        let ny = ((y_hi - y_lo) / step).ceil() as usize;
        let mut inter = 0u64;
        let mut union = 0u64;
        for iy in 0..ny {
            let y = y_lo + (iy as f32 + 0.5) * step;
            for ix in 0..nx {
                let x = x_lo + (ix as f32 + 0.5) * step;
                let in_a = a.contains(x, y);
                let in_b = b.contains(x, y);
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn overlapping_boxes_match_grid_counting_oracle() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        let b = bx(1.0, 1.0, 3.0, 3.0);
        let got = box_iou(&a, &b);
        let oracle = grid_iou(&a, &b, 0.001);
        assert!((got as f64 - oracle).abs() < 1e-3, "impl {got} vs oracle {oracle}");
        assert!((got - 1.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f32::NAN, 2.0).is_err());
    }

    #[test]
    fn mask_iou_identity_and_empty() {
        let mut a = Mask::from_elem((4, 4), false);
        a[[1, 1]] = true;
        a[[2, 2]] = true;
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let empty = Mask::from_elem((4, 4), false);
        assert_eq!(mask_iou(&a, &empty).unwrap(), 0.0);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn mask_iou_counting_case() {
        // a: columns 0-1 set on every row; b: its transpose (rows 0-1 set).
        let a = Mask::from_shape_fn((4, 4), |(_, c)| c < 2);
        let b = Mask::from_shape_fn((4, 4), |(r, _)| r < 2);
        // Direct pixel count: intersection 2x2 = 4, union 8 + 8 - 4 = 12.
        let mut inter = 0;
        let mut union = 0;
        for (x, y) in a.iter().zip(b.iter()) {
            inter += (*x && *y) as usize;
            union += (*x || *y) as usize;
        }
        assert_eq!((inter, union), (4, 12));
        assert_eq!(mask_iou(&a, &b).unwrap(), 4.0 / 12.0);
    }

    #[test]
    fn mask_iou_shape_mismatch_errors() {
        let a = Mask::from_elem((4, 4), true);
        let b = Mask::from_elem((4, 5), true);
        assert!(mask_iou(&a, &b).is_err());
    }

    #[test]
    fn mask_bbox_tight() {
        let mut m = Mask::from_elem((6, 6), false);
        m[[2, 1]] = true;
        m[[4, 3]] = true;
        let b = mask_bbox(&m).unwrap();
        assert_eq!((b.x0, b.y0, b.x1, b.y1), (1.0, 2.0, 4.0, 5.0));
    }

    proptest! {
        #[test]
        fn iou_in_unit_interval_and_symmetric(
            ax in -50.0f32..50.0, ay in -50.0f32..50.0,
            aw in 0.1f32..40.0, ah in 0.1f32..40.0,
            bx0 in -50.0f32..50.0, by0 in -50.0f32..50.0,
            bw in 0.1f32..40.0, bh in 0.1f32..40.0,
        ) {
            let a = BBox::new(ax, ay, ax + aw, ay + ah).unwrap();
            let b = BBox::new(bx0, by0, bx0 + bw, by0 + bh).unwrap();
            let ab = box_iou(&a, &b);
            let ba = box_iou(&b, &a);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(box_iou(&a, &a), 1.0);
            // IoU 1 only for identical boxes.
            if ab == 1.0 {
                prop_assert!(a == b);
            }
        }
    }
}
