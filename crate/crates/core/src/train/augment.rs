//! Sample-level data augmentation: horizontal flip, Gaussian blur, and
//! brightness jitter, all annotation-consistent and seed-deterministic.

use ndarray::{Array1, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::keypoint::swap_left_right;
use crate::rng::stream_rng;
use crate::sample::{Instance, Sample};

/// Which augmentations the training loop may apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip: bool,
    pub blur: bool,
    pub brightness: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            blur: true,
            brightness: true,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip: false,
            blur: false,
            brightness: false,
        }
    }
}

/// The concrete draws for one augmentation application. Splitting the
/// decision from the transform keeps both halves independently testable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDecision {
    pub flip: bool,
    /// Gaussian blur standard deviation in pixels; 0 means no blur.
    pub blur_sigma: f32,
    /// Multiplicative brightness factor; 1 means unchanged.
    pub brightness: f32,
}

impl AugmentDecision {
    pub fn identity() -> Self {
        AugmentDecision {
            flip: false,
            blur_sigma: 0.0,
            brightness: 1.0,
        }
    }
}

/// Maximum blur standard deviation in pixels.
pub const BLUR_SIGMA_MAX: f32 = 1.5;
/// Brightness jitter range.
pub const BRIGHTNESS_RANGE: (f32, f32) = (0.8, 1.2);

/// Draw one augmentation decision. The three draws always happen in a
/// fixed order so the stream advances identically whatever the toggles;
/// disabled transforms fall back to their identity values.
pub fn draw_decision(cfg: &AugmentConfig, seed: u64) -> AugmentDecision {
    let mut rng = stream_rng(seed, 0);
    let flip_coin = rng.random::<f32>() < 0.5;
    let sigma = rng.random_range(0.0..=BLUR_SIGMA_MAX);
    let bright = rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1);
    AugmentDecision {
        flip: cfg.flip && flip_coin,
        blur_sigma: if cfg.blur { sigma } else { 0.0 },
        brightness: if cfg.brightness { bright } else { 1.0 },
    }
}

/// Mirror a sample left-right: image columns reverse, boxes and masks
/// mirror, keypoint x-coordinates map to `W - 1 - x`, and left/right
/// keypoint identities swap. Applying the same flip twice recovers the
/// original wherever the coordinates round-trip through `W - x` exactly
/// (integral and dyadic coordinates always do).
pub fn flip_sample(s: &Sample) -> Sample {
    let w = s.width();
    let wf = w as f32;
    let image = s.image.slice(ndarray::s![.., ..;-1, ..]).to_owned();
    let instances = s
        .instances
        .iter()
        .map(|inst| {
            let mut bbox = inst.bbox;
            let (x0, x1) = (wf - inst.bbox.x1, wf - inst.bbox.x0);
            bbox.x0 = x0;
            bbox.x1 = x1;
            let mask = inst.mask.slice(ndarray::s![.., ..;-1]).to_owned();
            let keypoints = inst.keypoints.map(|mut kps| {
                for kp in kps.iter_mut() {
                    if kp.visibility.is_labeled() {
                        kp.x = wf - 1.0 - kp.x;
                    }
                }
                swap_left_right(&mut kps);
                kps
            });
            Instance {
                bbox,
                mask,
                keypoints,
                category: inst.category,
                visibility_ratio: inst.visibility_ratio,
            }
        })
        .collect();
    Sample {
        image,
        instances,
        domain: s.domain,
        sample_id: s.sample_id.clone(),
        rng_seed: s.rng_seed,
    }
}

/// Separable Gaussian blur with edge replication. The kernel is a convex
/// combination, so [0, 1] pixel ranges survive untouched. `sigma <= 0`
/// returns the input unchanged.
pub fn gaussian_blur(image: &Array3<f32>, sigma: f32) -> Array3<f32> {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (2.5 * sigma).ceil().max(1.0) as i64;
    let mut kernel = Array1::<f32>::zeros(2 * radius as usize + 1);
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f32 - radius as f32;
        *k = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let norm: f32 = kernel.sum();
    kernel.mapv_inplace(|v| v / norm);

    let (h, w, c) = image.dim();
    let mut tmp = Array3::<f32>::zeros((h, w, c));
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, &k) in kernel.iter().enumerate() {
                    let src = (col as i64 + i as i64 - radius).clamp(0, w as i64 - 1) as usize;
                    acc += k * image[[r, src, ch]];
                }
                tmp[[r, col, ch]] = acc;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((h, w, c));
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, &k) in kernel.iter().enumerate() {
                    let src = (r as i64 + i as i64 - radius).clamp(0, h as i64 - 1) as usize;
                    acc += k * tmp[[src, col, ch]];
                }
                out[[r, col, ch]] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Apply a concrete decision: flip, then blur, then brightness (clipped to
/// [0, 1]). Annotations are only touched by the flip.
pub fn apply_augment(s: &Sample, d: &AugmentDecision) -> Sample {
    let mut out = if d.flip { flip_sample(s) } else { s.clone() };
    if d.blur_sigma > 0.0 {
        out.image = gaussian_blur(&out.image, d.blur_sigma);
    }
    if d.brightness != 1.0 {
        out.image.mapv_inplace(|v| (v * d.brightness).clamp(0.0, 1.0));
    }
    out
}

/// Seeded augmentation entry point used by the training loop.
pub fn augment(s: &Sample, cfg: &AugmentConfig, seed: u64) -> Sample {
    apply_augment(s, &draw_decision(cfg, seed))
}
