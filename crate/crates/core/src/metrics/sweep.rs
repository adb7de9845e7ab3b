//! Occlusion-fraction sweep: progressively occlude fully visible instances
//! and track instance-level keypoint AP against the retained full ground
//! truth.

use serde::{Deserialize, Serialize};

use super::{keypoint_ap, ImagePoses, KappaTable, PoseGt};
use crate::error::{Error, Result};
use crate::infer::infer_pose_on_instance;
use crate::keypoint::{Keypoint, NUM_KEYPOINTS};
use crate::nets::{ModelConfig, ParamStore};
use crate::rng::derive_seed;
use crate::sample::Sample;
use crate::synthdata::occlude_instance;

/// The six reported occlusion fractions (20% … 70%).
pub const SWEEP_FRACTIONS: [f32; 6] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

/// One sweepable instance: fully visible and pose-annotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepUnit {
    pub sample_index: usize,
    pub instance_index: usize,
}

/// Sweep result at one fraction: keypoint AP aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f32,
    pub mean_ap: f64,
    /// Population standard deviation over the per-seed APs.
    pub stddev_ap: f64,
    pub per_seed_ap: Vec<f64>,
}

/// Instances eligible for the sweep: visibility ratio exactly 1.0 and a
/// full-pose annotation available.
pub fn sweep_units(
    samples: &[Sample],
    keypoints: &[Vec<Option<[Keypoint; NUM_KEYPOINTS]>>],
) -> Vec<SweepUnit> {
    let mut units = Vec::new();
    for (si, sample) in samples.iter().enumerate() {
        for (ii, inst) in sample.instances.iter().enumerate() {
            if inst.visibility_ratio == 1.0 && keypoints[si][ii].is_some() {
                units.push(SweepUnit {
                    sample_index: si,
                    instance_index: ii,
                });
            }
        }
    }
    units
}

/// For each fraction: occlude every eligible instance to that fraction,
/// run pose inference on its ground-truth box, and score instance-level
/// keypoint AP against the original (fully visible) annotation. Each seed
/// re-draws the occluders; the point reports mean and population stddev
/// over seeds. Fraction 0 leaves samples bit-identical, so its AP equals
/// the unoccluded AP exactly.
pub fn occlusion_sweep(
    store: &ParamStore,
    mcfg: &ModelConfig,
    samples: &[Sample],
    keypoints: &[Vec<Option<[Keypoint; NUM_KEYPOINTS]>>],
    fractions: &[f32],
    seeds: &[u64],
    kappas: &KappaTable,
) -> Result<Vec<SweepPoint>> {
    if keypoints.len() != samples.len() {
        return Err(Error::invalid_arg(format!(
            "keypoint annotations cover {} samples but the eval set has {}",
            keypoints.len(),
            samples.len()
        )));
    }
    if seeds.is_empty() {
        return Err(Error::invalid_arg("occlusion sweep needs at least one seed"));
    }
    let units = sweep_units(samples, keypoints);
    if units.is_empty() {
        return Err(Error::invalid_arg(
            "occlusion sweep needs at least one fully visible annotated instance",
        ));
    }

    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut images = Vec::with_capacity(units.len());
            for (ui, unit) in units.iter().enumerate() {
                let sample = &samples[unit.sample_index];
                let occluded = occlude_instance(
                    sample,
                    unit.instance_index,
                    fraction,
                    derive_seed(seed, ui as u64),
                )?;
                let pred = infer_pose_on_instance(store, mcfg, &occluded, unit.instance_index)?;
                let inst = &sample.instances[unit.instance_index];
                let gt = PoseGt {
                    keypoints: keypoints[unit.sample_index][unit.instance_index]
                        .expect("sweep units carry annotations"),
                    area: f64::from(inst.bbox.width()) * f64::from(inst.bbox.height()),
                };
                images.push(ImagePoses {
                    predictions: vec![pred],
                    gts: vec![gt],
                });
            }
            let suite = keypoint_ap(&images, kappas)?;
            per_seed.push(suite.ap.expect("sweep always has ground truth"));
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let var = per_seed
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / per_seed.len() as f64;
        points.push(SweepPoint {
            fraction,
            mean_ap: mean,
            stddev_ap: var.sqrt(),
            per_seed_ap: per_seed,
        });
    }
    Ok(points)
}
