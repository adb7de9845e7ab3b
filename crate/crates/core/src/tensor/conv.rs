//! Convolution kernels shared by the graph ops.
//!
//! Both directions are expressed through one im2col/col2im pair with an
//! explicit iteration grid: forward convolution gathers over the *output*
//! grid, while transposed convolution (and the backward-data pass of plain
//! convolution) scatters over the *input* grid. The matrix products go
//! through `general_mat_mul` so they hit the blocked matmul fast path.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4};

use crate::scalar::Scalar;

/// Output length of a strided convolution along one axis (floor semantics).
pub(crate) fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(stride >= 1, "stride must be >= 1");
    assert!(
        input + 2 * pad >= k,
        "kernel {k} larger than padded input {}",
        input + 2 * pad
    );
    (input + 2 * pad - k) / stride + 1
}

/// Output length of a transposed convolution along one axis.
pub(crate) fn conv_t_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    let full = (input - 1) * stride + k;
    assert!(full > 2 * pad, "transposed conv output would be empty");
    full - 2 * pad
}

/// Gather patches of `src` (C, SH, SW) into a (C*k*k, gh*gw) matrix. Grid
/// cell (gy, gx) with kernel offset (ky, kx) reads `src[c, gy*stride+ky-pad,
/// gx*stride+kx-pad]`, with zero padding outside.
pub(crate) fn im2col<T: Scalar>(
    src: &Array3<T>,
    k: usize,
    stride: usize,
    pad: usize,
    grid: (usize, usize),
) -> Array2<T> {
    let (c_in, sh, sw) = src.dim();
    let (gh, gw) = grid;
    let mut cols = Array2::<T>::zeros((c_in * k * k, gh * gw));
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for gy in 0..gh {
                    let sy = (gy * stride + ky) as isize - pad as isize;
                    if sy < 0 || sy >= sh as isize {
                        continue;
                    }
                    for gx in 0..gw {
                        let sx = (gx * stride + kx) as isize - pad as isize;
                        if sx < 0 || sx >= sw as isize {
                            continue;
                        }
                        cols[[row, gy * gw + gx]] = src[[c, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add inverse of [`im2col`]: accumulate a (C*k*k, gh*gw) matrix
/// into a (C, TH, TW) volume over the same index mapping.
pub(crate) fn col2im<T: Scalar>(
    cols: &Array2<T>,
    target: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    grid: (usize, usize),
) -> Array3<T> {
    let (c_n, th, tw) = target;
    let (gh, gw) = grid;
    assert_eq!(cols.dim(), (c_n * k * k, gh * gw));
    let mut out = Array3::<T>::zeros(target);
    for c in 0..c_n {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for gy in 0..gh {
                    let ty = (gy * stride + ky) as isize - pad as isize;
                    if ty < 0 || ty >= th as isize {
                        continue;
                    }
                    for gx in 0..gw {
                        let tx = (gx * stride + kx) as isize - pad as isize;
                        if tx < 0 || tx >= tw as isize {
                            continue;
                        }
                        out[[c, ty as usize, tx as usize]] =
                            out[[c, ty as usize, tx as usize]] + cols[[row, gy * gw + gx]];
                    }
                }
            }
        }
    }
    out
}

fn group_mat<T: Scalar>(w: &Array4<T>, g: usize, cpg_out: usize) -> Array2<T> {
    let (_, c_in_g, k, _) = w.dim();
    w.slice(s![g * cpg_out..(g + 1) * cpg_out, .., .., ..])
        .to_owned()
        .into_shape_with_order((cpg_out, c_in_g * k * k))
        .expect("weight slice is contiguous")
}

/// Grouped 2-d convolution. `x` is (Cin, H, W), `w` is (Cout, Cin/groups,
/// k, k), `b` is (Cout,).
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Array3<T>,
    w: &Array4<T>,
    b: &Array1<T>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Array3<T> {
    let (c_in, h, wd) = x.dim();
    let (c_out, c_in_g, k, k2) = w.dim();
    assert_eq!(k, k2, "square kernels only");
    assert_eq!(b.len(), c_out);
    assert!(groups >= 1 && c_in % groups == 0 && c_out % groups == 0);
    assert_eq!(c_in / groups, c_in_g, "weight in-channels do not match input");
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(wd, k, stride, pad);
    let (cpg_in, cpg_out) = (c_in / groups, c_out / groups);
    let mut out = Array3::<T>::zeros((c_out, ho, wo));
    for g in 0..groups {
        let xg = x.slice(s![g * cpg_in..(g + 1) * cpg_in, .., ..]).to_owned();
        let cols = im2col(&xg, k, stride, pad, (ho, wo));
        let wmat = group_mat(w, g, cpg_out);
        let mut omat = Array2::<T>::zeros((cpg_out, ho * wo));
        general_mat_mul(T::one(), &wmat, &cols, T::zero(), &mut omat);
        let og = omat
            .into_shape_with_order((cpg_out, ho, wo))
            .expect("matmul output is contiguous");
        out.slice_mut(s![g * cpg_out..(g + 1) * cpg_out, .., ..])
            .assign(&og);
    }
    for c in 0..c_out {
        let bias = b[c];
        out.slice_mut(s![c, .., ..]).mapv_inplace(|v| v + bias);
    }
    out
}

/// Backward pass of [`conv2d_forward`]. Returns (dx, dw, db); dx is skipped
/// when `need_dx` is false (stem input layers).
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Array3<T>,
    w: &Array4<T>,
    stride: usize,
    pad: usize,
    groups: usize,
    d_out: &Array3<T>,
    need_dx: bool,
) -> (Option<Array3<T>>, Array4<T>, Array1<T>) {
    let (c_in, h, wd) = x.dim();
    let (c_out, c_in_g, k, _) = w.dim();
    let (_, ho, wo) = d_out.dim();
    let (cpg_in, cpg_out) = (c_in / groups, c_out / groups);
    let mut dw = Array4::<T>::zeros(w.dim());
    let mut db = Array1::<T>::zeros(c_out);
    let mut dx = need_dx.then(|| Array3::<T>::zeros(x.dim()));
    for c in 0..c_out {
        db[c] = d_out.slice(s![c, .., ..]).sum();
    }
    for g in 0..groups {
        let xg = x.slice(s![g * cpg_in..(g + 1) * cpg_in, .., ..]).to_owned();
        let cols = im2col(&xg, k, stride, pad, (ho, wo));
        let d_out_mat = d_out
            .slice(s![g * cpg_out..(g + 1) * cpg_out, .., ..])
            .to_owned()
            .into_shape_with_order((cpg_out, ho * wo))
            .expect("grad slice is contiguous");
        let mut dw_mat = Array2::<T>::zeros((cpg_out, c_in_g * k * k));
        general_mat_mul(T::one(), &d_out_mat, &cols.t().to_owned(), T::zero(), &mut dw_mat);
        let dw_g = dw_mat
            .into_shape_with_order((cpg_out, c_in_g, k, k))
            .expect("contiguous");
        dw.slice_mut(s![g * cpg_out..(g + 1) * cpg_out, .., .., ..])
            .assign(&dw_g);
        if let Some(dx) = dx.as_mut() {
            let wmat = group_mat(w, g, cpg_out);
            let mut dcols = Array2::<T>::zeros((cpg_in * k * k, ho * wo));
            general_mat_mul(T::one(), &wmat.t().to_owned(), &d_out_mat, T::zero(), &mut dcols);
            let dxg = col2im(&dcols, (cpg_in, h, wd), k, stride, pad, (ho, wo));
            dx.slice_mut(s![g * cpg_in..(g + 1) * cpg_in, .., ..])
                .assign(&dxg);
        }
    }
    (dx, dw, db)
}

/// Transposed 2-d convolution. `x` is (Cin, H, W), `w` is (Cin, Cout, k, k),
/// `b` is (Cout,). With k=4, stride=2, pad=1 this exactly doubles H and W.
pub(crate) fn conv_t2d_forward<T: Scalar>(
    x: &Array3<T>,
    w: &Array4<T>,
    b: &Array1<T>,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let (c_in, h, wd) = x.dim();
    let (c_in_w, c_out, k, k2) = w.dim();
    assert_eq!(k, k2, "square kernels only");
    assert_eq!(c_in, c_in_w, "weight in-channels do not match input");
    assert_eq!(b.len(), c_out);
    let ho = conv_t_out_size(h, k, stride, pad);
    let wo = conv_t_out_size(wd, k, stride, pad);
    let w_mat = w
        .to_owned()
        .into_shape_with_order((c_in, c_out * k * k))
        .expect("weights are contiguous");
    let x_mat = x
        .to_owned()
        .into_shape_with_order((c_in, h * wd))
        .expect("input is contiguous");
    let mut cols = Array2::<T>::zeros((c_out * k * k, h * wd));
    general_mat_mul(T::one(), &w_mat.t().to_owned(), &x_mat, T::zero(), &mut cols);
    let mut out = col2im(&cols, (c_out, ho, wo), k, stride, pad, (h, wd));
    for c in 0..c_out {
        let bias = b[c];
        out.slice_mut(s![c, .., ..]).mapv_inplace(|v| v + bias);
    }
    out
}

/// Backward pass of [`conv_t2d_forward`].
pub(crate) fn conv_t2d_backward<T: Scalar>(
    x: &Array3<T>,
    w: &Array4<T>,
    stride: usize,
    pad: usize,
    d_out: &Array3<T>,
    need_dx: bool,
) -> (Option<Array3<T>>, Array4<T>, Array1<T>) {
    let (c_in, h, wd) = x.dim();
    let (_, c_out, k, _) = w.dim();
    let mut db = Array1::<T>::zeros(c_out);
    for c in 0..c_out {
        db[c] = d_out.slice(s![c, .., ..]).sum();
    }
    // Gathering the output gradient over the input grid inverts the scatter.
    let dcols = im2col(d_out, k, stride, pad, (h, wd));
    let x_mat = x
        .to_owned()
        .into_shape_with_order((c_in, h * wd))
        .expect("input is contiguous");
    let mut dw_mat = Array2::<T>::zeros((c_in, c_out * k * k));
    general_mat_mul(T::one(), &x_mat, &dcols.t().to_owned(), T::zero(), &mut dw_mat);
    let dw = dw_mat
        .into_shape_with_order((c_in, c_out, k, k))
        .expect("contiguous");
    let dx = need_dx.then(|| {
        let w_mat = w
            .to_owned()
            .into_shape_with_order((c_in, c_out * k * k))
            .expect("weights are contiguous");
        let mut dx_mat = Array2::<T>::zeros((c_in, h * wd));
        general_mat_mul(T::one(), &w_mat, &dcols, T::zero(), &mut dx_mat);
        dx_mat
            .into_shape_with_order((c_in, h, wd))
            .expect("contiguous")
    });
    (dx, dw, db)
}
