//! Region-of-interest feature extraction with bilinear sampling.

use ndarray::Array3;

use crate::scalar::Scalar;

/// A rectangle in feature-map corner coordinates (half-open, like boxes in
/// image space divided by the stride).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl RoiRect {
    pub fn is_valid(&self) -> bool {
        self.x0.is_finite()
            && self.y0.is_finite()
            && self.x1.is_finite()
            && self.y1.is_finite()
            && self.x1 > self.x0
            && self.y1 > self.y0
    }
}

/// One bilinear tap: the four corner cells and interpolation fractions for a
/// sample point along each axis.
#[derive(Debug, Clone, Copy)]
struct AxisTap {
    lo: usize,
    hi: usize,
    t: f64,
}

/// Resolve a continuous corner-space coordinate to neighbouring cell centres.
/// Cell `i` has its centre at `i + 0.5`; coordinates beyond the border clamp
/// to the border cell, matching the usual feature-extraction convention.
fn axis_tap(coord: f64, size: usize) -> AxisTap {
    debug_assert!(size >= 1);
    if size == 1 {
        return AxisTap { lo: 0, hi: 0, t: 0.0 };
    }
    let f = (coord - 0.5).clamp(0.0, (size - 1) as f64);
    let lo = (f.floor() as usize).min(size - 2);
    AxisTap {
        lo,
        hi: lo + 1,
        t: f - lo as f64,
    }
}

fn sample_points(rect: &RoiRect, out_size: usize) -> Vec<(f64, f64)> {
    let sx = (rect.x1 - rect.x0) / out_size as f64;
    let sy = (rect.y1 - rect.y0) / out_size as f64;
    let mut pts = Vec::with_capacity(out_size * out_size);
    for i in 0..out_size {
        let v = rect.y0 + (i as f64 + 0.5) * sy;
        for j in 0..out_size {
            let u = rect.x0 + (j as f64 + 0.5) * sx;
            pts.push((u, v));
        }
    }
    pts
}

/// Sample an `out_size` x `out_size` grid of bilinear taps from `x`
/// (C, H, W) over `rect`. One sample point per output bin, at its centre.
pub(crate) fn roi_align_forward<T: Scalar>(
    x: &Array3<T>,
    rect: &RoiRect,
    out_size: usize,
) -> Array3<T> {
    assert!(rect.is_valid(), "invalid roi rect {rect:?}");
    assert!(out_size >= 1);
    let (c_n, h, w) = x.dim();
    let mut out = Array3::<T>::zeros((c_n, out_size, out_size));
    for (idx, (u, v)) in sample_points(rect, out_size).into_iter().enumerate() {
        let tx = axis_tap(u, w);
        let ty = axis_tap(v, h);
        let (i, j) = (idx / out_size, idx % out_size);
        let w00 = T::from_f64((1.0 - ty.t) * (1.0 - tx.t));
        let w01 = T::from_f64((1.0 - ty.t) * tx.t);
        let w10 = T::from_f64(ty.t * (1.0 - tx.t));
        let w11 = T::from_f64(ty.t * tx.t);
        for c in 0..c_n {
            out[[c, i, j]] = w00 * x[[c, ty.lo, tx.lo]]
                + w01 * x[[c, ty.lo, tx.hi]]
                + w10 * x[[c, ty.hi, tx.lo]]
                + w11 * x[[c, ty.hi, tx.hi]];
        }
    }
    out
}

/// Scatter the output gradient back through the bilinear taps.
pub(crate) fn roi_align_backward<T: Scalar>(
    input_dim: (usize, usize, usize),
    rect: &RoiRect,
    out_size: usize,
    d_out: &Array3<T>,
) -> Array3<T> {
    let (c_n, h, w) = input_dim;
    assert_eq!(d_out.dim(), (c_n, out_size, out_size));
    let mut dx = Array3::<T>::zeros(input_dim);
    for (idx, (u, v)) in sample_points(rect, out_size).into_iter().enumerate() {
        let tx = axis_tap(u, w);
        let ty = axis_tap(v, h);
        let (i, j) = (idx / out_size, idx % out_size);
        let w00 = T::from_f64((1.0 - ty.t) * (1.0 - tx.t));
        let w01 = T::from_f64((1.0 - ty.t) * tx.t);
        let w10 = T::from_f64(ty.t * (1.0 - tx.t));
        let w11 = T::from_f64(ty.t * tx.t);
        for c in 0..c_n {
            let g = d_out[[c, i, j]];
            dx[[c, ty.lo, tx.lo]] = dx[[c, ty.lo, tx.lo]] + g * w00;
            dx[[c, ty.lo, tx.hi]] = dx[[c, ty.lo, tx.hi]] + g * w01;
            dx[[c, ty.hi, tx.lo]] = dx[[c, ty.hi, tx.lo]] + g * w10;
            dx[[c, ty.hi, tx.hi]] = dx[[c, ty.hi, tx.hi]] + g * w11;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_field_samples_constant() {
        let x = Array3::from_elem((2, 6, 6), 3.25f64);
        let rect = RoiRect { x0: 0.7, y0: 1.1, x1: 5.3, y1: 4.9 };
        let out = roi_align_forward(&x, &rect, 4);
        for v in out.iter() {
            assert_relative_eq!(*v, 3.25, max_relative = 1e-12);
        }
    }

    #[test]
    fn linear_ramp_is_reproduced_exactly() {
        // Bilinear sampling is exact on an affine field (away from borders).
        let x = Array3::from_shape_fn((1, 8, 8), |(_, r, c)| r as f64 * 2.0 + c as f64 * 0.5);
        let rect = RoiRect { x0: 1.0, y0: 1.0, x1: 7.0, y1: 7.0 };
        let n = 3;
        let out = roi_align_forward(&x, &rect, n);
        for i in 0..n {
            for j in 0..n {
                let u = 1.0 + (j as f64 + 0.5) * 2.0;
                let v = 1.0 + (i as f64 + 0.5) * 2.0;
                // Field value at corner coordinate (u, v): cell centre (r + 0.5).
                let expect = (v - 0.5) * 2.0 + (u - 0.5) * 0.5;
                assert_relative_eq!(out[[0, i, j]], expect, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn aligned_single_cell_bins_copy_values() {
        // A rect covering exactly the grid with out_size == grid size puts
        // each sample point on a cell centre.
        let x = Array3::from_shape_fn((1, 4, 4), |(_, r, c)| (r * 4 + c) as f64);
        let rect = RoiRect { x0: 0.0, y0: 0.0, x1: 4.0, y1: 4.0 };
        let out = roi_align_forward(&x, &rect, 4);
        for r in 0..4 {
            for c in 0..4 {
                assert_relative_eq!(out[[0, r, c]], x[[0, r, c]], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn out_of_bounds_rect_clamps_to_border() {
        let x = Array3::from_shape_fn((1, 4, 4), |(_, r, c)| (r * 4 + c) as f64);
        let rect = RoiRect { x0: -10.0, y0: -10.0, x1: -5.0, y1: -5.0 };
        let out = roi_align_forward(&x, &rect, 2);
        for v in out.iter() {
            assert_relative_eq!(*v, x[[0, 0, 0]], max_relative = 1e-12);
        }
    }

    #[test]
    fn backward_conserves_gradient_mass() {
        // The tap weights sum to one per sample, so total scattered gradient
        // equals total upstream gradient.
        let rect = RoiRect { x0: 0.3, y0: 0.9, x1: 5.1, y1: 4.2 };
        let d_out = Array3::from_shape_fn((3, 5, 5), |(c, i, j)| (c + i * 5 + j) as f64 * 0.1);
        let dx = roi_align_backward((3, 6, 6), &rect, 5, &d_out);
        assert_relative_eq!(dx.sum(), d_out.sum(), max_relative = 1e-9);
    }
}
