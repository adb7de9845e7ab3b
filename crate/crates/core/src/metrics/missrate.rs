//! Log-average miss rate over false-positives-per-image operating points,
//! with ground truths binned by visibility ratio.

use crate::geom::{box_iou, BBox};
use crate::nets::Detection;
use serde::{Deserialize, Serialize};

/// Number of FPPI reference points.
pub const FPPI_POINTS: usize = 9;

/// Matching IoU for detection-to-ground-truth assignment.
pub const MR_MATCH_IOU: f32 = 0.5;

/// Floor applied inside the geometric mean so a zero miss rate at one
/// reference point cannot collapse the log-average when other points are
/// nonzero. The all-zero (perfect) case returns exactly 0.0 instead.
pub const MR_FLOOR: f64 = 1e-10;

/// Nine reference FPPI values evenly log-spaced over [1e-2, 1e0].
pub fn fppi_reference_points() -> [f64; FPPI_POINTS] {
    let mut pts = [0.0; FPPI_POINTS];
    for (i, p) in pts.iter_mut().enumerate() {
        *p = 10f64.powf(-2.0 + 2.0 * i as f64 / (FPPI_POINTS - 1) as f64);
    }
    pts
}

/// Visibility bins: Reasonable keeps mostly-visible pedestrians, Heavy
/// Occlusion the strongly occluded band, and their union spans both. The
/// 0.65 boundary belongs to Reasonable (half-open bands partition cleanly).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityBin {
    /// visibility ∈ [0.65, 1].
    Reasonable,
    /// visibility ∈ [0.20, 0.65).
    HeavyOcclusion,
    /// visibility ∈ [0.20, 1].
    ReasonablePlusHeavy,
}

impl VisibilityBin {
    pub const ALL: [VisibilityBin; 3] = [
        VisibilityBin::Reasonable,
        VisibilityBin::HeavyOcclusion,
        VisibilityBin::ReasonablePlusHeavy,
    ];

    pub fn contains(self, visibility: f32) -> bool {
        match self {
            VisibilityBin::Reasonable => visibility >= 0.65,
            VisibilityBin::HeavyOcclusion => (0.20..0.65).contains(&visibility),
            VisibilityBin::ReasonablePlusHeavy => visibility >= 0.20,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VisibilityBin::Reasonable => "R",
            VisibilityBin::HeavyOcclusion => "HO",
            VisibilityBin::ReasonablePlusHeavy => "R+HO",
        }
    }
}

/// One ground-truth box with its annotated visibility ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub visibility_ratio: f32,
}

/// Detections and ground truths of one image.
#[derive(Debug, Clone, Default)]
pub struct ImageDetections {
    pub detections: Vec<Detection>,
    pub gts: Vec<GtBox>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum DetLabel {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Log-average miss rate for one visibility bin; `None` when the bin holds
/// no ground truth at all.
///
/// Ground truths inside the bin are targets; the rest are ignore regions.
/// Detections match greedily in descending score (ties by input order) to
/// the unmatched target of highest IoU, requiring IoU ≥ 0.5; a detection
/// overlapping only ignore regions counts neither way (ignore regions may
/// absorb any number of detections). The miss-rate-versus-FPPI curve is
/// sampled at the nine [`fppi_reference_points`]; each reference takes the
/// lowest miss rate among operating points with FPPI ≤ the reference (1.0
/// when none qualifies), and the result is the geometric mean of the nine
/// samples (exactly 0.0 when all nine are zero).
pub fn miss_rate(images: &[ImageDetections], bin: VisibilityBin) -> Option<f64> {
    let n_images = images.len();
    let mut n_targets = 0usize;
    // (score, image index, detection index, label), labelled per image.
    let mut rows: Vec<(f32, usize, usize, DetLabel)> = Vec::new();
    for (ii, img) in images.iter().enumerate() {
        let targets: Vec<bool> = img
            .gts
            .iter()
            .map(|g| bin.contains(g.visibility_ratio))
            .collect();
        n_targets += targets.iter().filter(|&&t| t).count();

        let mut order: Vec<usize> = (0..img.detections.len()).collect();
        order.sort_by(|&a, &b| {
            img.detections[b]
                .score
                .partial_cmp(&img.detections[a].score)
                .expect("finite scores")
        });
        let mut taken = vec![false; img.gts.len()];
        for di in order {
            let det = &img.detections[di];
            let mut best: Option<(f32, usize)> = None;
            for gi in 0..img.gts.len() {
                if taken[gi] || !targets[gi] {
                    continue;
                }
                let iou = box_iou(&det.bbox, &img.gts[gi].bbox);
                if iou >= MR_MATCH_IOU && best.is_none_or(|(bi, _)| iou > bi) {
                    best = Some((iou, gi));
                }
            }
            let label = if let Some((_, gi)) = best {
                taken[gi] = true;
                DetLabel::TruePositive
            } else if (0..img.gts.len())
                .any(|gi| !targets[gi] && box_iou(&det.bbox, &img.gts[gi].bbox) >= MR_MATCH_IOU)
            {
                DetLabel::Ignored
            } else {
                DetLabel::FalsePositive
            };
            rows.push((det.score, ii, di, label));
        }
    }
    if n_targets == 0 {
        return None;
    }

    rows.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite scores")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    // Operating points: one per distinct score threshold, after including
    // every detection at that score.
    let mut ops: Vec<(f64, f64)> = Vec::new(); // (fppi, miss rate)
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < rows.len() {
        let score = rows[i].0;
        while i < rows.len() && rows[i].0 == score {
            match rows[i].3 {
                DetLabel::TruePositive => tp += 1,
                DetLabel::FalsePositive => fp += 1,
                DetLabel::Ignored => {}
            }
            i += 1;
        }
        ops.push((
            fp as f64 / n_images as f64,
            1.0 - tp as f64 / n_targets as f64,
        ));
    }

    let samples = fppi_reference_points().map(|f| {
        let mut mr: f64 = 1.0; // the empty operating point (no detections)
        for &(fppi, op_mr) in &ops {
            if fppi <= f {
                mr = mr.min(op_mr);
            }
        }
        mr
    });
    Some(log_average(&samples))
}

/// Geometric mean of the sampled miss rates with the [`MR_FLOOR`] clamp;
/// exactly 0.0 when every sample is zero.
pub(crate) fn log_average(samples: &[f64; FPPI_POINTS]) -> f64 {
    if samples.iter().all(|&m| m == 0.0) {
        return 0.0;
    }
    let mean_log = samples
        .iter()
        .map(|&m| m.max(MR_FLOOR).ln())
        .sum::<f64>()
        / FPPI_POINTS as f64;
    mean_log.exp()
}
