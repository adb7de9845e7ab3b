//! Loss terms and their weighted combination.
//!
//! Everything here is a pure function over plain arrays; the differentiable
//! graph ops in `tensor` call these for their forward values and are held to
//! them (and to finite differences) in tests.

use ndarray::{Array2, Array3, ArrayViewD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Mask;
use crate::keypoint::{Visibility, NUM_KEYPOINTS};
use crate::sample::Domain;
use crate::scalar::Scalar;

/// Probability clipping used by every cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

/// Focal-loss constants for the objectness map.
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.5,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

/// The six raw loss terms of one step, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub det_c: f64,
    pub det_m: f64,
    pub seg_c: f64,
    pub seg_m: f64,
    pub dc: f64,
    pub pe: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub det_c: f64,
    pub det_m: f64,
    pub seg_c: f64,
    pub seg_m: f64,
    pub dc: f64,
    pub pe: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(parts: &LossParts, weights: &LossWeights) -> Result<Self> {
        let total = total_loss(parts, weights)?;
        Ok(LossBreakdown {
            det_c: parts.det_c,
            det_m: parts.det_m,
            seg_c: parts.seg_c,
            seg_m: parts.seg_m,
            dc: parts.dc,
            pe: parts.pe,
            total,
        })
    }
}

/// Weighted combination of the six terms:
/// `det_c + det_m + alpha*(seg_c + seg_m) + beta*dc + gamma*pe`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    let named = [
        ("det_c", parts.det_c),
        ("det_m", parts.det_m),
        ("seg_c", parts.seg_c),
        ("seg_m", parts.seg_m),
        ("dc", parts.dc),
        ("pe", parts.pe),
    ];
    for (name, v) in named {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(match name {
                "det_c" => "det_c",
                "det_m" => "det_m",
                "seg_c" => "seg_c",
                "seg_m" => "seg_m",
                "dc" => "dc",
                _ => "pe",
            }));
        }
    }
    let a = w.alpha as f64;
    let b = w.beta as f64;
    let g = w.gamma as f64;
    Ok(parts.det_c + parts.det_m + a * parts.seg_c + a * parts.seg_m + b * parts.dc + g * parts.pe)
}

#[inline]
pub fn clip_prob<T: Scalar>(p: T) -> T {
    let eps = T::from_f64(PROB_EPS);
    let hi = T::one() - eps;
    if p < eps {
        eps
    } else if p > hi {
        hi
    } else {
        p
    }
}

/// Mean binary cross-entropy between a probability array and a 0/1 target
/// array of the same shape.
pub fn bce_mean<T: Scalar>(pred: ArrayViewD<T>, target: ArrayViewD<T>) -> T {
    assert_eq!(pred.shape(), target.shape(), "bce_mean shape mismatch");
    let n = T::from_count(pred.len());
    let mut acc = T::zero();
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let p = clip_prob(p);
        acc = acc - (t * p.ln() + (T::one() - t) * (T::one() - p).ln());
    }
    acc / n
}

/// Mean BCE between a predicted probability map and a binary raster.
pub fn seg_loss<T: Scalar>(pred_prob: &Array2<T>, gt_mask: &Mask) -> Result<T> {
    if pred_prob.dim() != gt_mask.dim() {
        return Err(Error::ShapeMismatch {
            context: "seg_loss",
            expected: vec![gt_mask.dim().0, gt_mask.dim().1],
            got: vec![pred_prob.dim().0, pred_prob.dim().1],
        });
    }
    let target = gt_mask.mapv(|v| if v { T::one() } else { T::zero() });
    Ok(bce_mean(
        pred_prob.view().into_dyn(),
        target.view().into_dyn(),
    ))
}

/// Sum of focal-modulated BCE over an array of probabilities vs 0/1 targets.
pub fn focal_bce_sum<T: Scalar>(
    pred: ArrayViewD<T>,
    target: ArrayViewD<T>,
    alpha: T,
    gamma: T,
) -> T {
    assert_eq!(pred.shape(), target.shape(), "focal_bce_sum shape mismatch");
    let one = T::one();
    let mut acc = T::zero();
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let p = clip_prob(p);
        if t > T::from_f64(0.5) {
            acc = acc - alpha * (one - p).powf(gamma) * p.ln();
        } else {
            acc = acc - (one - alpha) * p.powf(gamma) * (one - p).ln();
        }
    }
    acc
}

#[inline]
pub fn smooth_l1<T: Scalar>(r: T) -> T {
    let a = r.abs();
    if a < T::one() {
        r * r / T::from_f64(2.0)
    } else {
        a - T::from_f64(0.5)
    }
}

/// Weighted sum of smooth-L1 residuals (no normalization).
pub fn smooth_l1_weighted_sum<T: Scalar>(
    pred: ArrayViewD<T>,
    target: ArrayViewD<T>,
    weight: ArrayViewD<T>,
) -> T {
    assert_eq!(pred.shape(), target.shape());
    assert_eq!(pred.shape(), weight.shape());
    let mut acc = T::zero();
    for ((&p, &t), &w) in pred.iter().zip(target.iter()).zip(weight.iter()) {
        if w != T::zero() {
            acc = acc + w * smooth_l1(p - t);
        }
    }
    acc
}

/// Sum over positive cells of categorical cross-entropy on per-cell class
/// logits of shape (K, h, w).
pub fn softmax_ce_sum<T: Scalar>(
    logits: &Array3<T>,
    classes: &Array2<usize>,
    pos: &Array2<bool>,
) -> T {
    let (k, h, w) = logits.dim();
    assert_eq!(classes.dim(), (h, w));
    assert_eq!(pos.dim(), (h, w));
    let mut acc = T::zero();
    for r in 0..h {
        for c in 0..w {
            if !pos[[r, c]] {
                continue;
            }
            let cls = classes[[r, c]];
            assert!(cls < k, "class index out of range");
            let mut m = logits[[0, r, c]];
            for ki in 1..k {
                m = m.max(logits[[ki, r, c]]);
            }
            let mut denom = T::zero();
            for ki in 0..k {
                denom = denom + (logits[[ki, r, c]] - m).exp();
            }
            acc = acc - (logits[[cls, r, c]] - m - denom.ln());
        }
    }
    acc
}

/// Encoded detection targets for one image at one head resolution.
#[derive(Debug, Clone)]
pub struct DetTargets<T: Scalar> {
    /// 0/1 objectness target, (h, w).
    pub obj: Array2<T>,
    /// Category index per cell; meaningful only where `pos` is set.
    pub classes: Array2<usize>,
    /// FCOS-style distances (left, top, right, bottom) in stride units, (4, h, w).
    pub offsets: Array3<T>,
    /// Positive-cell mask.
    pub pos: Array2<bool>,
}

impl<T: Scalar> DetTargets<T> {
    pub fn num_pos(&self) -> usize {
        self.pos.iter().filter(|v| **v).count()
    }
}

/// Raw detection head outputs for one image.
#[derive(Debug, Clone)]
pub struct DetPredMaps<T: Scalar> {
    /// Objectness probability (post-sigmoid), (h, w).
    pub obj_prob: Array2<T>,
    /// Category logits, (K, h, w).
    pub class_logits: Array3<T>,
    /// Offset regressions, (4, h, w).
    pub offsets: Array3<T>,
}

/// Detection loss: focal classification on the objectness map plus
/// smooth-L1 offset regression and categorical cross-entropy at positive
/// cells, the whole averaged by positive count. With no positives only the
/// focal term remains; the returned flag marks that case for logging.
pub fn det_loss<T: Scalar>(pred: &DetPredMaps<T>, targets: &DetTargets<T>) -> (T, bool) {
    let npos = targets.num_pos();
    let norm = T::from_count(npos.max(1));
    let focal = focal_bce_sum(
        pred.obj_prob.view().into_dyn(),
        targets.obj.view().into_dyn(),
        T::from_f64(FOCAL_ALPHA),
        T::from_f64(FOCAL_GAMMA),
    );
    let mut total = focal / norm;
    if npos > 0 {
        let (_, h, w) = pred.offsets.dim();
        let mut weight = Array3::<T>::zeros((4, h, w));
        for r in 0..h {
            for c in 0..w {
                if targets.pos[[r, c]] {
                    for d in 0..4 {
                        weight[[d, r, c]] = T::one();
                    }
                }
            }
        }
        let reg = smooth_l1_weighted_sum(
            pred.offsets.view().into_dyn(),
            targets.offsets.view().into_dyn(),
            weight.view().into_dyn(),
        );
        let ce = softmax_ce_sum(&pred.class_logits, &targets.classes, &targets.pos);
        total = total + reg / norm + ce / norm;
    }
    (total, npos == 0)
}

/// Visibility-masked mean squared error on heatmaps. Channels whose
/// keypoint is not labeled are excluded from the mean; labeled-invisible
/// channels are supervised like visible ones. Returns the loss and a flag
/// set when every channel was excluded (loss 0 in that case).
pub fn pose_loss<T: Scalar>(
    pred: &Array3<T>,
    target: &Array3<T>,
    visibilities: &[Visibility; NUM_KEYPOINTS],
) -> Result<(T, bool)> {
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch {
            context: "pose_loss",
            expected: target.shape().to_vec(),
            got: pred.shape().to_vec(),
        });
    }
    let (k, h, w) = pred.dim();
    assert_eq!(k, NUM_KEYPOINTS);
    let included: Vec<usize> = (0..k).filter(|&i| visibilities[i].is_labeled()).collect();
    if included.is_empty() {
        return Ok((T::zero(), true));
    }
    let norm = T::from_count(included.len() * h * w);
    let mut acc = T::zero();
    for &ch in &included {
        for r in 0..h {
            for c in 0..w {
                let d = pred[[ch, r, c]] - target[[ch, r, c]];
                acc = acc + d * d;
            }
        }
    }
    Ok((acc / norm, false))
}

/// Binary cross-entropy of the domain classifier output against the
/// domain label (source = 1, target = 0).
pub fn domain_loss<T: Scalar>(p_source: T, domain: Domain) -> T {
    let p = clip_prob(p_source);
    match domain {
        Domain::Source => -p.ln(),
        Domain::Target => -(T::one() - p).ln(),
    }
}
