//! Evaluation stack: OKS keypoint average precision, log-average miss rate
//! over visibility bins, instance segmentation IoU per category, and the
//! occlusion-fraction sweep.
//!
//! All metric arithmetic runs in `f64`; inputs keep their native `f32`
//! precision. Every public metric returns `Option<f64>` where the protocol
//! defines an "absent" outcome (no ground truth in scope) so that absence is
//! never conflated with a zero score.

mod ap;
mod missrate;
mod report;
mod segiou;
mod sweep;

#[cfg(test)]
mod tests;

pub use ap::{keypoint_ap, oks, ApSuite, ImagePoses, AREA_MEDIUM_PX2, AREA_LARGE_PX2, OKS_THRESHOLDS};
pub use missrate::{
    fppi_reference_points, miss_rate, GtBox, ImageDetections, VisibilityBin, FPPI_POINTS, MR_FLOOR,
};
pub use report::{evaluate_dataset, gt_keypoints, EvalOptions, EvalReport, MissRateBins, SegIouTable};
pub use segiou::{instance_seg_iou, matched_ious, CategorizedMask};
pub use sweep::{occlusion_sweep, sweep_units, SweepPoint, SweepUnit, SWEEP_FRACTIONS};

use crate::error::{Error, Result};
use crate::keypoint::NUM_KEYPOINTS;
use serde::{Deserialize, Serialize};

/// Per-keypoint OKS tolerance constants κ_i. Defaults are the standard COCO
/// values (κ = 2σ) restricted to the 13 retained joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaTable {
    pub kappas: [f64; NUM_KEYPOINTS],
}

impl Default for KappaTable {
    fn default() -> Self {
        // nose, shoulders, elbows, wrists, hips, knees, ankles (L/R pairs).
        KappaTable {
            kappas: [
                0.052, // nose
                0.158, 0.158, // shoulders
                0.144, 0.144, // elbows
                0.124, 0.124, // wrists
                0.214, 0.214, // hips
                0.174, 0.174, // knees
                0.178, 0.178, // ankles
            ],
        }
    }
}

impl KappaTable {
    pub fn validate(&self) -> Result<()> {
        for (i, k) in self.kappas.iter().enumerate() {
            if !(k.is_finite() && *k > 0.0) {
                return Err(Error::invalid_arg(format!(
                    "kappa[{i}] must be a positive finite number, got {k}"
                )));
            }
        }
        Ok(())
    }
}

/// One scored pose hypothesis: 13 predicted keypoints plus a confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosePrediction {
    pub keypoints: [crate::keypoint::Keypoint; NUM_KEYPOINTS],
    pub score: f64,
}

/// One pose ground truth: 13 annotated keypoints and the instance's box
/// area in px² (the OKS normalizer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGt {
    pub keypoints: [crate::keypoint::Keypoint; NUM_KEYPOINTS],
    pub area: f64,
}
