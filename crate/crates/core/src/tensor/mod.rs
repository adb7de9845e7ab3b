//! Reverse-mode automatic differentiation over `ndarray` values.
//!
//! The graph is a define-by-run tape: every operation eagerly computes its
//! forward value and records which earlier variables it read. `backward`
//! walks the tape once in reverse, accumulating gradients only into
//! variables that (transitively) require them. Graphs are rebuilt each
//! training step, which keeps the tape a plain `Vec` with index parents.
//!
//! The element type is generic: training runs in `f32`, while the gradient
//! tests instantiate the same code at `f64` so finite differences are
//! meaningful at tight tolerances.

mod conv;
mod init;
mod roi;

pub use init::kaiming_uniform;
pub use roi::RoiRect;

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, IxDyn};

use crate::losses;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Add(VarId, VarId),
    Scale(VarId, T),
    Mul(VarId, VarId),
    LeakyRelu(VarId, T),
    Sigmoid(VarId),
    Conv2d {
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    ConvT2d {
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: VarId,
        w: VarId,
        b: VarId,
    },
    GlobalAvgPool(VarId),
    ChannelScale {
        x: VarId,
        scale: VarId,
    },
    Upsample2x(VarId),
    RoiAlign {
        x: VarId,
        rect: RoiRect,
        out_size: usize,
    },
    MaskMul {
        x: VarId,
        mask: ArrayD<T>,
    },
    GradReverse(VarId, T),
    SumAll(VarId),
    BceMean {
        pred: VarId,
        target: ArrayD<T>,
    },
    FocalBceSum {
        pred: VarId,
        target: ArrayD<T>,
        alpha: T,
        gamma: T,
    },
    SmoothL1Sum {
        pred: VarId,
        target: ArrayD<T>,
        weight: ArrayD<T>,
    },
    SoftmaxCeSum {
        logits: VarId,
        classes: Array2<usize>,
        pos: Array2<bool>,
    },
    MseChannelMasked {
        pred: VarId,
        target: ArrayD<T>,
        include: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: ArrayD<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients keyed by [`VarId`], produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: VarId) -> Option<&ArrayD<T>> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

pub fn as1<T: Scalar>(a: &ArrayD<T>) -> Array1<T> {
    a.to_owned().into_dimensionality().expect("1-d value")
}

pub fn as3<T: Scalar>(a: &ArrayD<T>) -> Array3<T> {
    a.to_owned().into_dimensionality().expect("3-d value")
}

fn as4<T: Scalar>(a: &ArrayD<T>) -> Array4<T> {
    a.to_owned().into_dimensionality().expect("4-d value")
}

fn scalar_arr<T: Scalar>(v: T) -> ArrayD<T> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

#[inline]
fn sigmoid_val<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &ArrayD<T> {
        &self.nodes[id.0].value
    }

    /// Value of a scalar (single-element) variable.
    pub fn scalar_value(&self, id: VarId) -> T {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "expected scalar value, got shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: ArrayD<T>, op: Op<T>, needs_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: ArrayD<T>, requires_grad: bool) -> VarId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: ArrayD<T>) -> VarId {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "add shape mismatch"
        );
        let value = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn scale(&mut self, a: VarId, c: T) -> VarId {
        let value = self.value(a).mapv(|v| v * c);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "mul shape mismatch"
        );
        let value = self.value(a) * self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn leaky_relu(&mut self, x: VarId, slope: T) -> VarId {
        let value = self
            .value(x)
            .mapv(|v| if v >= T::zero() { v } else { v * slope });
        let needs = self.needs(x);
        self.push(value, Op::LeakyRelu(x, slope), needs)
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let value = self.value(x).mapv(sigmoid_val);
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid(x), needs)
    }

    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> VarId {
        let xv = as3(self.value(x));
        let wv = as4(self.value(w));
        let bv = as1(self.value(b));
        let value = conv::conv2d_forward(&xv, &wv, &bv, stride, pad, groups).into_dyn();
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                groups,
            },
            needs,
        )
    }

    pub fn conv_t2d(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> VarId {
        let xv = as3(self.value(x));
        let wv = as4(self.value(w));
        let bv = as1(self.value(b));
        let value = conv::conv_t2d_forward(&xv, &wv, &bv, stride, pad).into_dyn();
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(value, Op::ConvT2d { x, w, b, stride, pad }, needs)
    }

    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> VarId {
        let xv = as1(self.value(x));
        let wv: Array2<T> = self
            .value(w)
            .to_owned()
            .into_dimensionality()
            .expect("2-d weights");
        let bv = as1(self.value(b));
        assert_eq!(wv.dim().1, xv.len(), "linear shape mismatch");
        assert_eq!(wv.dim().0, bv.len(), "linear bias mismatch");
        let value = (wv.dot(&xv) + bv).into_dyn();
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(value, Op::Linear { x, w, b }, needs)
    }

    /// Global average pool: (C, H, W) -> (C,).
    pub fn gap(&mut self, x: VarId) -> VarId {
        let xv = as3(self.value(x));
        let (c_n, h, w) = xv.dim();
        let inv = T::from_count(h * w).recip();
        let mut out = Array1::<T>::zeros(c_n);
        for c in 0..c_n {
            out[c] = xv.index_axis(ndarray::Axis(0), c).sum() * inv;
        }
        let needs = self.needs(x);
        self.push(out.into_dyn(), Op::GlobalAvgPool(x), needs)
    }

    /// Multiply each channel of `x` (C, H, W) by `scale[c]` from a (C,) vector.
    pub fn channel_scale(&mut self, x: VarId, scale: VarId) -> VarId {
        let xv = as3(self.value(x));
        let sv = as1(self.value(scale));
        assert_eq!(xv.dim().0, sv.len(), "channel_scale mismatch");
        let mut out = xv.clone();
        for (c, mut plane) in out.outer_iter_mut().enumerate() {
            let s = sv[c];
            plane.mapv_inplace(|v| v * s);
        }
        let needs = self.needs(x) || self.needs(scale);
        self.push(out.into_dyn(), Op::ChannelScale { x, scale }, needs)
    }

    /// Nearest-neighbour 2x upsample: (C, H, W) -> (C, 2H, 2W).
    pub fn upsample2x(&mut self, x: VarId) -> VarId {
        let xv = as3(self.value(x));
        let (c_n, h, w) = xv.dim();
        let out = Array3::from_shape_fn((c_n, 2 * h, 2 * w), |(c, i, j)| xv[[c, i / 2, j / 2]]);
        let needs = self.needs(x);
        self.push(out.into_dyn(), Op::Upsample2x(x), needs)
    }

    pub fn roi_align(&mut self, x: VarId, rect: RoiRect, out_size: usize) -> VarId {
        let xv = as3(self.value(x));
        let value = roi::roi_align_forward(&xv, &rect, out_size).into_dyn();
        let needs = self.needs(x);
        self.push(value, Op::RoiAlign { x, rect, out_size }, needs)
    }

    /// Elementwise product with a constant mask of the same shape.
    pub fn mask_mul(&mut self, x: VarId, mask: ArrayD<T>) -> VarId {
        assert_eq!(self.value(x).shape(), mask.shape(), "mask_mul mismatch");
        let value = self.value(x) * &mask;
        let needs = self.needs(x);
        self.push(value, Op::MaskMul { x, mask }, needs)
    }

    /// Identity forward; multiplies the gradient by `-lambda` on the way back.
    pub fn grad_reverse(&mut self, x: VarId, lambda: T) -> VarId {
        let value = self.value(x).clone();
        let needs = self.needs(x);
        self.push(value, Op::GradReverse(x, lambda), needs)
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let value = scalar_arr(self.value(x).sum());
        let needs = self.needs(x);
        self.push(value, Op::SumAll(x), needs)
    }

    pub fn bce_mean(&mut self, pred: VarId, target: ArrayD<T>) -> VarId {
        assert_eq!(self.value(pred).shape(), target.shape());
        let value = scalar_arr(losses::bce_mean(self.value(pred).view(), target.view()));
        let needs = self.needs(pred);
        self.push(value, Op::BceMean { pred, target }, needs)
    }

    pub fn focal_bce_sum(&mut self, pred: VarId, target: ArrayD<T>, alpha: T, gamma: T) -> VarId {
        assert_eq!(self.value(pred).shape(), target.shape());
        let value = scalar_arr(losses::focal_bce_sum(
            self.value(pred).view(),
            target.view(),
            alpha,
            gamma,
        ));
        let needs = self.needs(pred);
        self.push(
            value,
            Op::FocalBceSum {
                pred,
                target,
                alpha,
                gamma,
            },
            needs,
        )
    }

    pub fn smooth_l1_sum(&mut self, pred: VarId, target: ArrayD<T>, weight: ArrayD<T>) -> VarId {
        assert_eq!(self.value(pred).shape(), target.shape());
        assert_eq!(self.value(pred).shape(), weight.shape());
        let value = scalar_arr(losses::smooth_l1_weighted_sum(
            self.value(pred).view(),
            target.view(),
            weight.view(),
        ));
        let needs = self.needs(pred);
        self.push(
            value,
            Op::SmoothL1Sum {
                pred,
                target,
                weight,
            },
            needs,
        )
    }

    pub fn softmax_ce_sum(
        &mut self,
        logits: VarId,
        classes: Array2<usize>,
        pos: Array2<bool>,
    ) -> VarId {
        let lv = as3(self.value(logits));
        let value = scalar_arr(losses::softmax_ce_sum(&lv, &classes, &pos));
        let needs = self.needs(logits);
        self.push(value, Op::SoftmaxCeSum { logits, classes, pos }, needs)
    }

    /// Mean squared error over the channels marked in `include` (channel
    /// axis 0); excluded channels contribute nothing, including to the
    /// normalizer. All channels excluded yields a constant zero.
    pub fn mse_channel_masked(
        &mut self,
        pred: VarId,
        target: ArrayD<T>,
        include: Vec<bool>,
    ) -> VarId {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape());
        assert_eq!(pv.shape()[0], include.len(), "include mask mismatch");
        let n_inc = include.iter().filter(|v| **v).count();
        let value = if n_inc == 0 {
            scalar_arr(T::zero())
        } else {
            let spatial: usize = pv.shape()[1..].iter().product();
            let norm = T::from_count(n_inc * spatial);
            let mut acc = T::zero();
            for (ch, plane) in pv.outer_iter().enumerate() {
                if !include[ch] {
                    continue;
                }
                for (p, t) in plane.iter().zip(target.index_axis(ndarray::Axis(0), ch).iter()) {
                    let d = *p - *t;
                    acc = acc + d * d;
                }
            }
            scalar_arr(acc / norm)
        };
        let needs = self.needs(pred) && include.iter().any(|v| *v);
        self.push(
            value,
            Op::MseChannelMasked {
                pred,
                target,
                include,
            },
            needs,
        )
    }

    /// Reverse pass from a scalar root. Returns per-variable gradients for
    /// every variable that required them.
    pub fn backward(&self, root: VarId) -> Gradients<T> {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward root must be scalar, got shape {:?}",
            self.value(root).shape()
        );
        let mut grads: Vec<Option<ArrayD<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::from_elem(self.value(root).raw_dim(), T::one()));
        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue; // keep leaf gradients for the caller
            }
            let g = grads[i].take().unwrap();
            self.backprop_node(i, g, &mut grads);
        }
        // Drop gradients that accumulated into non-leaf constants.
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<ArrayD<T>>], id: VarId, delta: ArrayD<T>) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => *acc += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, i: usize, g: ArrayD<T>, grads: &mut [Option<ArrayD<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf => unreachable!("leaves are not backpropagated"),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g);
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.mapv(|v| v * c));
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, &g * self.value(*b));
                self.accumulate(grads, *b, &g * self.value(*a));
            }
            Op::LeakyRelu(x, slope) => {
                let slope = *slope;
                let mut dx = g;
                dx.zip_mut_with(self.value(*x), |gv, xv| {
                    if *xv < T::zero() {
                        *gv = *gv * slope;
                    }
                });
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let mut dx = g;
                dx.zip_mut_with(&self.nodes[i].value, |gv, ov| {
                    *gv = *gv * *ov * (T::one() - *ov);
                });
                self.accumulate(grads, *x, dx);
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                groups,
            } => {
                let xv = as3(self.value(*x));
                let wv = as4(self.value(*w));
                let g3 = as3(&g);
                let (dx, dw, db) =
                    conv::conv2d_backward(&xv, &wv, *stride, *pad, *groups, &g3, self.needs(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx.into_dyn());
                }
                self.accumulate(grads, *w, dw.into_dyn());
                self.accumulate(grads, *b, db.into_dyn());
            }
            Op::ConvT2d { x, w, b, stride, pad } => {
                let xv = as3(self.value(*x));
                let wv = as4(self.value(*w));
                let g3 = as3(&g);
                let (dx, dw, db) =
                    conv::conv_t2d_backward(&xv, &wv, *stride, *pad, &g3, self.needs(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx.into_dyn());
                }
                self.accumulate(grads, *w, dw.into_dyn());
                self.accumulate(grads, *b, db.into_dyn());
            }
            Op::Linear { x, w, b } => {
                let g1 = as1(&g);
                let xv = as1(self.value(*x));
                let wv: Array2<T> = self
                    .value(*w)
                    .to_owned()
                    .into_dimensionality()
                    .expect("2-d weights");
                if self.needs(*x) {
                    let dx = wv.t().dot(&g1);
                    self.accumulate(grads, *x, dx.into_dyn());
                }
                let dw = Array2::from_shape_fn(wv.dim(), |(o, f)| g1[o] * xv[f]);
                self.accumulate(grads, *w, dw.into_dyn());
                self.accumulate(grads, *b, g1.into_dyn());
            }
            Op::GlobalAvgPool(x) => {
                let g1 = as1(&g);
                let xv = as3(self.value(*x));
                let (c_n, h, w) = xv.dim();
                let inv = T::from_count(h * w).recip();
                let dx = Array3::from_shape_fn((c_n, h, w), |(c, _, _)| g1[c] * inv);
                self.accumulate(grads, *x, dx.into_dyn());
            }
            Op::ChannelScale { x, scale } => {
                let g3 = as3(&g);
                let xv = as3(self.value(*x));
                let sv = as1(self.value(*scale));
                if self.needs(*x) {
                    let mut dx = g3.clone();
                    for (c, mut plane) in dx.outer_iter_mut().enumerate() {
                        let s = sv[c];
                        plane.mapv_inplace(|v| v * s);
                    }
                    self.accumulate(grads, *x, dx.into_dyn());
                }
                if self.needs(*scale) {
                    let mut ds = Array1::<T>::zeros(sv.len());
                    for c in 0..sv.len() {
                        ds[c] = (&g3.index_axis(ndarray::Axis(0), c)
                            * &xv.index_axis(ndarray::Axis(0), c))
                            .sum();
                    }
                    self.accumulate(grads, *scale, ds.into_dyn());
                }
            }
            Op::Upsample2x(x) => {
                let g3 = as3(&g);
                let xv = as3(self.value(*x));
                let (c_n, h, w) = xv.dim();
                let mut dx = Array3::<T>::zeros((c_n, h, w));
                for c in 0..c_n {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            dx[[c, i / 2, j / 2]] = dx[[c, i / 2, j / 2]] + g3[[c, i, j]];
                        }
                    }
                }
                self.accumulate(grads, *x, dx.into_dyn());
            }
            Op::RoiAlign { x, rect, out_size } => {
                let g3 = as3(&g);
                let dim = {
                    let s = self.value(*x).shape();
                    (s[0], s[1], s[2])
                };
                let dx = roi::roi_align_backward(dim, rect, *out_size, &g3);
                self.accumulate(grads, *x, dx.into_dyn());
            }
            Op::MaskMul { x, mask } => {
                self.accumulate(grads, *x, &g * mask);
            }
            Op::GradReverse(x, lambda) => {
                let neg = -*lambda;
                self.accumulate(grads, *x, g.mapv(|v| v * neg));
            }
            Op::SumAll(x) => {
                let gs = *g.iter().next().unwrap();
                let dx = ArrayD::from_elem(self.value(*x).raw_dim(), gs);
                self.accumulate(grads, *x, dx);
            }
            Op::BceMean { pred, target } => {
                let gs = *g.iter().next().unwrap();
                let pv = self.value(*pred);
                let inv_n = T::from_count(pv.len()).recip();
                let eps = T::from_f64(losses::PROB_EPS);
                let hi = T::one() - eps;
                let mut dp = pv.clone();
                dp.zip_mut_with(target, |p, t| {
                    *p = if *p > eps && *p < hi {
                        gs * inv_n * (*p - *t) / (*p * (T::one() - *p))
                    } else {
                        T::zero()
                    };
                });
                self.accumulate(grads, *pred, dp);
            }
            Op::FocalBceSum {
                pred,
                target,
                alpha,
                gamma,
            } => {
                let gs = *g.iter().next().unwrap();
                let (alpha, gamma) = (*alpha, *gamma);
                let eps = T::from_f64(losses::PROB_EPS);
                let hi = T::one() - eps;
                let one = T::one();
                let half = T::from_f64(0.5);
                let mut dp = self.value(*pred).clone();
                dp.zip_mut_with(target, |p, t| {
                    let pv = *p;
                    *p = if pv > eps && pv < hi {
                        if *t > half {
                            // d/dp of -alpha (1-p)^gamma ln p
                            gs * (alpha * gamma * (one - pv).powf(gamma - one) * pv.ln()
                                - alpha * (one - pv).powf(gamma) / pv)
                        } else {
                            // d/dp of -(1-alpha) p^gamma ln(1-p)
                            gs * ((one - alpha) * pv.powf(gamma) / (one - pv)
                                - (one - alpha) * gamma * pv.powf(gamma - one) * (one - pv).ln())
                        }
                    } else {
                        T::zero()
                    };
                });
                self.accumulate(grads, *pred, dp);
            }
            Op::SmoothL1Sum {
                pred,
                target,
                weight,
            } => {
                let gs = *g.iter().next().unwrap();
                let pv = self.value(*pred);
                let mut dp = ArrayD::<T>::zeros(pv.raw_dim());
                for ((d, (&p, &t)), &w) in dp
                    .iter_mut()
                    .zip(pv.iter().zip(target.iter()))
                    .zip(weight.iter())
                {
                    if w == T::zero() {
                        continue;
                    }
                    let r = p - t;
                    let slope = if r.abs() < T::one() {
                        r
                    } else if r > T::zero() {
                        T::one()
                    } else {
                        -T::one()
                    };
                    *d = gs * w * slope;
                }
                self.accumulate(grads, *pred, dp);
            }
            Op::SoftmaxCeSum {
                logits,
                classes,
                pos,
            } => {
                let gs = *g.iter().next().unwrap();
                let lv = as3(self.value(*logits));
                let (k, h, w) = lv.dim();
                let mut dl = Array3::<T>::zeros((k, h, w));
                for r in 0..h {
                    for c in 0..w {
                        if !pos[[r, c]] {
                            continue;
                        }
                        let mut m = lv[[0, r, c]];
                        for ki in 1..k {
                            m = m.max(lv[[ki, r, c]]);
                        }
                        let mut denom = T::zero();
                        for ki in 0..k {
                            denom = denom + (lv[[ki, r, c]] - m).exp();
                        }
                        for ki in 0..k {
                            let soft = (lv[[ki, r, c]] - m).exp() / denom;
                            let onehot = if ki == classes[[r, c]] { T::one() } else { T::zero() };
                            dl[[ki, r, c]] = gs * (soft - onehot);
                        }
                    }
                }
                self.accumulate(grads, *logits, dl.into_dyn());
            }
            Op::MseChannelMasked {
                pred,
                target,
                include,
            } => {
                let gs = *g.iter().next().unwrap();
                let pv = self.value(*pred);
                let n_inc = include.iter().filter(|v| **v).count();
                if n_inc == 0 {
                    return;
                }
                let spatial: usize = pv.shape()[1..].iter().product();
                let coeff = gs * T::from_f64(2.0) / T::from_count(n_inc * spatial);
                let mut dp = ArrayD::<T>::zeros(pv.raw_dim());
                for ch in 0..include.len() {
                    if !include[ch] {
                        continue;
                    }
                    let mut dpl = dp.index_axis_mut(ndarray::Axis(0), ch);
                    let pl = pv.index_axis(ndarray::Axis(0), ch);
                    let tl = target.index_axis(ndarray::Axis(0), ch);
                    for ((d, &p), &t) in dpl.iter_mut().zip(pl.iter()).zip(tl.iter()) {
                        *d = coeff * (p - t);
                    }
                }
                self.accumulate(grads, *pred, dp);
            }
        }
    }
}
