//! Object keypoint similarity and the keypoint average-precision suite.

use super::{KappaTable, PoseGt, PosePrediction};
use crate::error::{Error, Result};
use crate::keypoint::{Keypoint, NUM_KEYPOINTS};
use serde::{Deserialize, Serialize};

/// OKS thresholds for the averaged AP: 0.50, 0.55, …, 0.95.
pub const OKS_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Medium-object area range in px²: [32², 96²).
pub const AREA_MEDIUM_PX2: (f64, f64) = (1024.0, 9216.0);
/// Large-object area range in px²: [96², ∞).
pub const AREA_LARGE_PX2: (f64, f64) = (9216.0, f64::INFINITY);

/// Object keypoint similarity between a predicted and an annotated pose:
/// the mean over labeled ground-truth joints of
/// `exp(−d_i² / (2 · area · κ_i²))` with `d_i` the Euclidean error.
///
/// Errors when `area` is not positive and finite or when no ground-truth
/// joint is labeled.
pub fn oks(
    pred: &[Keypoint; NUM_KEYPOINTS],
    gt: &[Keypoint; NUM_KEYPOINTS],
    area: f64,
    kappas: &KappaTable,
) -> Result<f64> {
    if !(area.is_finite() && area > 0.0) {
        return Err(Error::invalid_arg(format!(
            "oks area must be positive and finite, got {area}"
        )));
    }
    kappas.validate()?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..NUM_KEYPOINTS {
        if !gt[i].visibility.is_labeled() {
            continue;
        }
        let dx = f64::from(pred[i].x) - f64::from(gt[i].x);
        let dy = f64::from(pred[i].y) - f64::from(gt[i].y);
        let k = kappas.kappas[i];
        sum += (-(dx * dx + dy * dy) / (2.0 * area * k * k)).exp();
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid_arg(
            "oks requires at least one labeled ground-truth keypoint",
        ));
    }
    Ok(sum / n as f64)
}

/// All pose hypotheses and ground truths of one image.
#[derive(Debug, Clone, Default)]
pub struct ImagePoses {
    pub predictions: Vec<PosePrediction>,
    pub gts: Vec<PoseGt>,
}

/// The Table-1-shaped AP suite. Each entry is absent (`None`) when its
/// ground-truth population is empty, never reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ApSuite {
    /// Mean AP over the ten OKS thresholds.
    pub ap: Option<f64>,
    /// AP at OKS ≥ 0.50.
    pub ap50: Option<f64>,
    /// AP at OKS ≥ 0.75.
    pub ap75: Option<f64>,
    /// Mean AP restricted to medium ground truths (area ∈ [32², 96²)).
    pub ap_m: Option<f64>,
    /// Mean AP restricted to large ground truths (area ≥ 96²).
    pub ap_l: Option<f64>,
}

impl ApSuite {
    pub fn values(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("AP", self.ap),
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("AP_M", self.ap_m),
            ("AP_L", self.ap_l),
        ]
    }
}

/// Keypoint AP over a set of images.
///
/// Matching is greedy per image in descending prediction score (ties by
/// input order): each prediction takes the unmatched in-range ground truth
/// of highest OKS, provided OKS ≥ threshold. Ground truths outside the area
/// range — and any ground truth without a single labeled joint — are ignore
/// regions: predictions whose best remaining match is such a region are
/// dropped from scoring (neither true nor false positive), and ignore
/// regions may absorb any number of predictions. AP is the mean over the
/// 101-point interpolated precision-recall curve, averaged over the
/// [`OKS_THRESHOLDS`] for the headline number.
pub fn keypoint_ap(images: &[ImagePoses], kappas: &KappaTable) -> Result<ApSuite> {
    kappas.validate()?;
    // Pre-compute the OKS matrix of every image once; thresholds and area
    // ranges reuse it.
    let mut mats: Vec<Vec<Vec<f64>>> = Vec::with_capacity(images.len());
    for img in images {
        let mut mat = vec![vec![0.0; img.gts.len()]; img.predictions.len()];
        for (pi, pred) in img.predictions.iter().enumerate() {
            for (gi, gt) in img.gts.iter().enumerate() {
                if !(gt.area.is_finite() && gt.area > 0.0) {
                    return Err(Error::invalid_arg(format!(
                        "ground-truth area must be positive and finite, got {}",
                        gt.area
                    )));
                }
                if gt.keypoints.iter().any(|k| k.visibility.is_labeled()) {
                    mat[pi][gi] = oks(&pred.keypoints, &gt.keypoints, gt.area, kappas)?;
                }
            }
        }
        mats.push(mat);
    }

    let mean_over = |range: Option<(f64, f64)>| -> Option<f64> {
        let mut acc = 0.0;
        for t in OKS_THRESHOLDS {
            acc += ap_at(images, &mats, t, range)?;
        }
        Some(acc / OKS_THRESHOLDS.len() as f64)
    };
    Ok(ApSuite {
        ap: mean_over(None),
        ap50: ap_at(images, &mats, 0.50, None),
        ap75: ap_at(images, &mats, 0.75, None),
        ap_m: mean_over(Some(AREA_MEDIUM_PX2)),
        ap_l: mean_over(Some(AREA_LARGE_PX2)),
    })
}

/// Is this ground truth a scoring target for the given area range?
/// Unlabeled ground truths are never targets.
fn is_target(gt: &PoseGt, range: Option<(f64, f64)>) -> bool {
    gt.keypoints.iter().any(|k| k.visibility.is_labeled())
        && range.is_none_or(|(lo, hi)| gt.area >= lo && gt.area < hi)
}

/// AP at a single OKS threshold and optional area range; `None` when the
/// target population is empty.
fn ap_at(
    images: &[ImagePoses],
    mats: &[Vec<Vec<f64>>],
    threshold: f64,
    range: Option<(f64, f64)>,
) -> Option<f64> {
    let mut n_gt = 0usize;
    // (score, image index, prediction index, is_tp) for scored predictions.
    let mut rows: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (ii, img) in images.iter().enumerate() {
        let targets: Vec<bool> = img.gts.iter().map(|g| is_target(g, range)).collect();
        n_gt += targets.iter().filter(|&&t| t).count();

        // Stable score-descending order keeps input order among ties.
        let mut order: Vec<usize> = (0..img.predictions.len()).collect();
        order.sort_by(|&a, &b| {
            img.predictions[b]
                .score
                .partial_cmp(&img.predictions[a].score)
                .expect("finite scores")
        });
        let mut taken = vec![false; img.gts.len()];
        for pi in order {
            let mut best: Option<(f64, usize)> = None;
            for gi in 0..img.gts.len() {
                if taken[gi] || !targets[gi] {
                    continue;
                }
                let o = mats[ii][pi][gi];
                if o >= threshold && best.is_none_or(|(bo, _)| o > bo) {
                    best = Some((o, gi));
                }
            }
            if let Some((_, gi)) = best {
                taken[gi] = true;
                rows.push((img.predictions[pi].score, ii, pi, true));
                continue;
            }
            // No target match: an ignore region absorbs the prediction.
            let ignored = (0..img.gts.len())
                .any(|gi| !targets[gi] && mats[ii][pi][gi] >= threshold);
            if !ignored {
                rows.push((img.predictions[pi].score, ii, pi, false));
            }
        }
    }
    if n_gt == 0 {
        return None;
    }
    rows.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite scores")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut curve = Vec::with_capacity(rows.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, _, _, is_tp) in rows {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_gt as f64;
        curve.push((recall, precision));
    }
    Some(interpolated_ap_101(&curve))
}

/// 101-point interpolated AP: mean over recall grid points r ∈ {0, 0.01, …,
/// 1.0} of the maximum precision among curve points with recall ≥ r.
fn interpolated_ap_101(curve: &[(f64, f64)]) -> f64 {
    // Suffix maximum of precision over the recall-ordered curve. The curve
    // arrives in score order, which makes recall non-decreasing already.
    let mut envelope: Vec<(f64, f64)> = curve.to_vec();
    let mut running = 0.0f64;
    for point in envelope.iter_mut().rev() {
        running = running.max(point.1);
        point.1 = running;
    }
    let mut acc = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        // First curve point with recall ≥ r carries the envelope maximum.
        let p = envelope
            .iter()
            .find(|(rec, _)| *rec >= r)
            .map_or(0.0, |(_, prec)| *prec);
        acc += p;
    }
    acc / 101.0
}
