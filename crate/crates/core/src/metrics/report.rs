//! Dataset-level evaluation orchestration and the report artifact.

use serde::{Deserialize, Serialize};

use super::ap::{keypoint_ap, ApSuite, ImagePoses};
use super::missrate::{miss_rate, GtBox, ImageDetections, VisibilityBin};
use super::segiou::{matched_ious, CategorizedMask};
use super::sweep::{occlusion_sweep, SweepPoint};
use super::{KappaTable, PoseGt};
use crate::error::{Error, Result};
use crate::infer::infer_sample;
use crate::keypoint::{Keypoint, NUM_KEYPOINTS};
use crate::nets::{ModelConfig, ParamStore};
use crate::sample::{Category, Sample};

/// Log-average miss rates per visibility bin; absent bins hold no ground
/// truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MissRateBins {
    pub r: Option<f64>,
    pub ho: Option<f64>,
    pub r_plus_ho: Option<f64>,
}

impl MissRateBins {
    pub fn values(&self) -> [(&'static str, Option<f64>); 3] {
        [("R", self.r), ("HO", self.ho), ("R+HO", self.r_plus_ho)]
    }
}

/// Mean instance segmentation IoU per category.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegIouTable {
    pub person: Option<f64>,
    pub rider: Option<f64>,
}

impl SegIouTable {
    pub fn values(&self) -> [(&'static str, Option<f64>); 2] {
        [("person", self.person), ("rider", self.rider)]
    }
}

/// The full evaluation artifact: AP suite, miss-rate bins, segmentation
/// IoU table, and (optionally) the occlusion sweep.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: ApSuite,
    pub miss_rate: MissRateBins,
    pub seg_iou: SegIouTable,
    pub occlusion_sweep: Option<Vec<SweepPoint>>,
}

/// Evaluation choices: OKS tolerances and the optional occlusion sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub kappas: KappaTable,
    /// Occlusion fractions to sweep; `None` skips the sweep.
    pub sweep_fractions: Option<Vec<f32>>,
    /// Seeds for the sweep's occluder draws.
    pub sweep_seeds: Vec<u64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            kappas: KappaTable::default(),
            sweep_fractions: None,
            sweep_seeds: vec![0, 1, 2],
        }
    }
}

/// Per-sample, per-instance pose annotations for scoring. Source-domain
/// samples carry them inline; for a target-domain eval set pass `annotated`
/// — the same scenes regenerated with pose labels attached (the generator's
/// geometry does not depend on the domain tag, so the twin is exact).
pub fn gt_keypoints(
    samples: &[Sample],
    annotated: Option<&[Sample]>,
) -> Result<Vec<Vec<Option<[Keypoint; NUM_KEYPOINTS]>>>> {
    let source = annotated.unwrap_or(samples);
    if source.len() != samples.len() {
        return Err(Error::invalid_arg(format!(
            "annotated twin set has {} samples, eval set has {}",
            source.len(),
            samples.len()
        )));
    }
    let mut out = Vec::with_capacity(samples.len());
    for (s, a) in samples.iter().zip(source) {
        if s.instances.len() != a.instances.len() {
            return Err(Error::invalid_arg(format!(
                "annotated twin of sample {} has {} instances, expected {}",
                s.sample_id,
                a.instances.len(),
                s.instances.len()
            )));
        }
        for (si, ai) in s.instances.iter().zip(&a.instances) {
            if si.bbox != ai.bbox {
                return Err(Error::invalid_arg(format!(
                    "annotated twin of sample {} disagrees on instance geometry",
                    s.sample_id
                )));
            }
        }
        out.push(a.instances.iter().map(|i| i.keypoints).collect());
    }
    Ok(out)
}

/// Run the full pipeline over an eval set and assemble the report.
pub fn evaluate_dataset(
    store: &ParamStore,
    mcfg: &ModelConfig,
    samples: &[Sample],
    annotated: Option<&[Sample]>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let keypoints = gt_keypoints(samples, annotated)?;

    let mut ap_images = Vec::with_capacity(samples.len());
    let mut mr_images = Vec::with_capacity(samples.len());
    let mut iou_scores: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (si, sample) in samples.iter().enumerate() {
        let inf = infer_sample(store, mcfg, sample)?;

        let unlabeled = [Keypoint::not_labeled(); NUM_KEYPOINTS];
        let gts = sample
            .instances
            .iter()
            .enumerate()
            .map(|(ii, inst)| PoseGt {
                // Instances without pose labels become ignore regions.
                keypoints: keypoints[si][ii].unwrap_or(unlabeled),
                area: f64::from(inst.bbox.width()) * f64::from(inst.bbox.height()),
            })
            .collect();
        ap_images.push(ImagePoses {
            predictions: inf.poses.iter().flatten().cloned().collect(),
            gts,
        });

        mr_images.push(ImageDetections {
            detections: inf.detections.clone(),
            gts: sample
                .instances
                .iter()
                .map(|inst| GtBox {
                    bbox: inst.bbox,
                    visibility_ratio: inst.visibility_ratio,
                })
                .collect(),
        });

        let pred_masks: Vec<CategorizedMask> = inf
            .masks
            .iter()
            .zip(&inf.detections)
            .map(|(mask, det)| CategorizedMask {
                mask: mask.clone(),
                category: det.category,
            })
            .collect();
        let gt_masks: Vec<CategorizedMask> = sample
            .instances
            .iter()
            .map(|inst| CategorizedMask {
                mask: inst.mask.clone(),
                category: inst.category,
            })
            .collect();
        for cat in Category::ALL {
            iou_scores[cat.index()]
                .extend(matched_ious(&pred_masks, &gt_masks, cat)?);
        }
    }

    let mean_of = |v: &Vec<f64>| {
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let occlusion = match &opts.sweep_fractions {
        Some(fractions) => Some(occlusion_sweep(
            store,
            mcfg,
            samples,
            &keypoints,
            fractions,
            &opts.sweep_seeds,
            &opts.kappas,
        )?),
        None => None,
    };
    let report = EvalReport {
        ap: keypoint_ap(&ap_images, &opts.kappas)?,
        miss_rate: MissRateBins {
            r: miss_rate(&mr_images, VisibilityBin::Reasonable),
            ho: miss_rate(&mr_images, VisibilityBin::HeavyOcclusion),
            r_plus_ho: miss_rate(&mr_images, VisibilityBin::ReasonablePlusHeavy),
        },
        seg_iou: SegIouTable {
            person: mean_of(&iou_scores[Category::Person.index()]),
            rider: mean_of(&iou_scores[Category::Rider.index()]),
        },
        occlusion_sweep: occlusion,
    };
    report.validate()?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "absent".to_owned(),
    }
}

impl EvalReport {
    /// Every present value must lie in [0, 1].
    pub fn validate(&self) -> Result<()> {
        let mut entries: Vec<(String, f64)> = Vec::new();
        for (k, v) in self.ap.values() {
            if let Some(x) = v {
                entries.push((k.to_owned(), x));
            }
        }
        for (k, v) in self.miss_rate.values() {
            if let Some(x) = v {
                entries.push((format!("MR {k}"), x));
            }
        }
        for (k, v) in self.seg_iou.values() {
            if let Some(x) = v {
                entries.push((format!("IoU {k}"), x));
            }
        }
        if let Some(sweep) = &self.occlusion_sweep {
            for p in sweep {
                entries.push((format!("sweep {:.0}% mean", p.fraction * 100.0), p.mean_ap));
                for (i, a) in p.per_seed_ap.iter().enumerate() {
                    entries.push((format!("sweep {:.0}% seed {i}", p.fraction * 100.0), *a));
                }
            }
        }
        for (k, v) in entries {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::invalid_arg(format!(
                    "report value {k} = {v} lies outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Human-readable block tables.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Keypoint AP\n");
        for (k, v) in self.ap.values() {
            out.push_str(&format!("  {k:<8}{}\n", fmt_opt(v)));
        }
        out.push_str("Miss rate (log-average)\n");
        for (k, v) in self.miss_rate.values() {
            out.push_str(&format!("  {k:<8}{}\n", fmt_opt(v)));
        }
        out.push_str("Instance segmentation IoU\n");
        for (k, v) in self.seg_iou.values() {
            out.push_str(&format!("  {k:<8}{}\n", fmt_opt(v)));
        }
        if let Some(sweep) = &self.occlusion_sweep {
            out.push_str("Occlusion sweep AP (mean +- stddev over seeds)\n");
            for p in sweep {
                out.push_str(&format!(
                    "  {:>3.0}%    {:.4} +- {:.4}\n",
                    p.fraction * 100.0,
                    p.mean_ap,
                    p.stddev_ap
                ));
            }
        }
        out
    }

    /// Machine-readable flat key-value rows (stable keys, one per metric).
    pub fn flat_pairs(&self) -> Vec<(String, String)> {
        let mut rows = Vec::new();
        let keys = ["ap", "ap50", "ap75", "ap_m", "ap_l"];
        for (key, (_, v)) in keys.iter().zip(self.ap.values()) {
            rows.push(((*key).to_owned(), fmt_num(v)));
        }
        rows.push(("mr_r".to_owned(), fmt_num(self.miss_rate.r)));
        rows.push(("mr_ho".to_owned(), fmt_num(self.miss_rate.ho)));
        rows.push(("mr_r_plus_ho".to_owned(), fmt_num(self.miss_rate.r_plus_ho)));
        rows.push(("iou_person".to_owned(), fmt_num(self.seg_iou.person)));
        rows.push(("iou_rider".to_owned(), fmt_num(self.seg_iou.rider)));
        if let Some(sweep) = &self.occlusion_sweep {
            for p in sweep {
                let pct = (f64::from(p.fraction) * 100.0).round() as i64;
                rows.push((format!("sweep_{pct}_mean"), format!("{:.12}", p.mean_ap)));
                rows.push((format!("sweep_{pct}_stddev"), format!("{:.12}", p.stddev_ap)));
            }
        }
        rows
    }
}

fn fmt_num(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.12}"),
        None => "absent".to_owned(),
    }
}
