//! The differentiable model zoo: two distribution-specific multi-task
//! networks (FPN encoder + detection decoder + segmentation decoder, each
//! with parameter-free spatial attention), and the shared instance-level
//! pose stack (ROI feature extraction with masking, pose encoder/decoder,
//! and an adversarial domain classifier behind a gradient-reversal layer).
//!
//! Components and their parameter namespaces:
//!
//! | component  | role                                   |
//! |------------|----------------------------------------|
//! | `enc_c`    | FPN encoder, annotated (source) network |
//! | `enc_m`    | FPN encoder, pose-free (target) network |
//! | `det_c/m`  | detection decoders                     |
//! | `seg_c/m`  | segmentation decoders                  |
//! | `pose_enc` | instance feature encoder (shared)      |
//! | `pose_dec` | keypoint heatmap decoder (shared)      |
//! | `dom_cls`  | domain classifier (adversarial head)   |

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use forward::{
    decode_detections, decode_pose, det_loss_graph, detect_forward, downsample_mask_roi,
    encode_det_targets, fpn_encode, instance_feature_values, instance_masks_from_seg,
    pose_forward, pose_target_maps, roi_extract_masked, seg_targets, segment_forward,
    spatial_attention, spatial_attention_values, DetHead, Detection, InstanceFeature, PoseOut,
    Pyramid, LEAKY_SLOPE, NMS_IOU, POSE_TARGET_SIGMA, REG_UNIT_STRIDES, SCORE_THRESHOLD,
    SEG_THRESHOLD,
};
pub use forward::domain_classify;
pub use params::{component_of, ComponentInit, ParamStore, Session, COMPONENTS};

/// The encoder / detection-decoder / segmentation-decoder component names
/// serving one distribution.
pub fn domain_components(domain: crate::sample::Domain) -> (&'static str, &'static str, &'static str) {
    match domain {
        crate::sample::Domain::Source => ("enc_c", "det_c", "seg_c"),
        crate::sample::Domain::Target => ("enc_m", "det_m", "seg_m"),
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoint::NUM_KEYPOINTS;

/// Encoder capacity tiers (the backbone-size ablation axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneSize {
    Small,
    Medium,
    Large,
}

impl BackboneSize {
    pub const ALL: [BackboneSize; 3] = [BackboneSize::Small, BackboneSize::Medium, BackboneSize::Large];

    /// Residual blocks in the encoder trunk.
    pub fn blocks(self) -> usize {
        match self {
            BackboneSize::Small => 8,
            BackboneSize::Medium => 14,
            BackboneSize::Large => 20,
        }
    }

    /// The large tier uses grouped 3x3 convolutions in its blocks.
    pub fn groups(self) -> usize {
        match self {
            BackboneSize::Large => 4,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackboneSize::Small => "small",
            BackboneSize::Medium => "medium",
            BackboneSize::Large => "large",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone_size: BackboneSize,
    /// Pyramid depth; level i has spatial size (H, W) / 2^(i+1).
    pub fpn_levels: usize,
    /// Channel width of every pyramid level.
    pub fpn_channels: usize,
    /// Image-to-grid stride of the detection head; must equal 2^(i+1) for
    /// some pyramid level i, which the head then consumes.
    pub heatmap_stride: usize,
    /// Side length of the square ROI feature patch.
    pub roi_size: usize,
    /// Gradient-reversal strength for the domain classifier.
    pub grl_lambda: f32,
    pub num_keypoints: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_size: BackboneSize::Small,
            fpn_levels: 3,
            fpn_channels: 16,
            heatmap_stride: 2,
            roi_size: 14,
            grl_lambda: 1.0,
            num_keypoints: NUM_KEYPOINTS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_keypoints != NUM_KEYPOINTS {
            return Err(Error::invalid_arg(format!(
                "num_keypoints must be {NUM_KEYPOINTS}, got {}",
                self.num_keypoints
            )));
        }
        if !(2..=5).contains(&self.fpn_levels) {
            return Err(Error::invalid_arg(format!(
                "fpn_levels must be in [2, 5], got {}",
                self.fpn_levels
            )));
        }
        if self.fpn_channels < 8 || self.fpn_channels % 4 != 0 {
            return Err(Error::invalid_arg(format!(
                "fpn_channels must be a multiple of 4 and at least 8, got {}",
                self.fpn_channels
            )));
        }
        if self.det_level().is_none() {
            return Err(Error::invalid_arg(format!(
                "heatmap_stride {} must equal 2^(i+1) for a pyramid level i < {}",
                self.heatmap_stride, self.fpn_levels
            )));
        }
        if self.roi_size < 4 {
            return Err(Error::invalid_arg(format!(
                "roi_size must be at least 4, got {}",
                self.roi_size
            )));
        }
        if !(self.grl_lambda >= 0.0 && self.grl_lambda.is_finite()) {
            return Err(Error::invalid_arg(format!(
                "grl_lambda must be finite and non-negative, got {}",
                self.grl_lambda
            )));
        }
        Ok(())
    }

    /// Pyramid level consumed by the detection head.
    pub fn det_level(&self) -> Option<usize> {
        let s = self.heatmap_stride;
        if s < 2 || !s.is_power_of_two() {
            return None;
        }
        let level = s.trailing_zeros() as usize - 1;
        (level < self.fpn_levels).then_some(level)
    }

    /// Image stride of pyramid level `i`.
    pub fn level_stride(&self, i: usize) -> usize {
        1 << (i + 1)
    }

    /// Channel width of encoder stage `i` (doubles per stage, capped at 8x).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.fpn_channels << i.min(3)
    }

    /// Residual blocks per encoder stage: the trunk budget split as evenly
    /// as possible, deeper stages taking the remainder.
    pub fn blocks_per_stage(&self) -> Vec<usize> {
        let total = self.backbone_size.blocks();
        let stages = self.fpn_levels;
        let base = total / stages;
        let rem = total % stages;
        (0..stages)
            .map(|i| base + usize::from(i >= stages - rem))
            .collect()
    }

    /// Pose heatmap side length (decoder upsamples the ROI once).
    pub fn heat_size(&self) -> usize {
        2 * self.roi_size
    }
}

/// Init damping for the second conv of each residual block. The backbone
/// has no normalization layers, so undamped residual branches double the
/// activation variance per block and saturate every head before training
/// starts.
pub const RESIDUAL_TAIL_INIT_SCALE: f32 = 0.05;

/// Init damping for final prediction convolutions (detection, segmentation
/// and pose outputs), keeping initial predictions near their priors while
/// still passing gradients from the first step.
pub const HEAD_INIT_SCALE: f32 = 0.01;

/// Build and initialize all nine components for a config.
///
/// Initialization is a pure function of (config, seed): each tensor's
/// values derive from its own full name, so two stores built with the same
/// arguments are bit-identical regardless of construction order.
pub fn init_components(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let f = cfg.fpn_channels;
    let levels = cfg.fpn_levels;
    let blocks = cfg.blocks_per_stage();
    let groups = cfg.backbone_size.groups();

    for enc in ["enc_c", "enc_m"] {
        let mut init = ComponentInit::new(&mut store, enc, seed);
        init.weight("stem.w", &[f, 3, 3, 3], 3 * 9);
        init.constant("stem.b", &[f], 0.0);
        for i in 0..levels {
            let ch = cfg.stage_channels(i);
            if i > 0 {
                let prev = cfg.stage_channels(i - 1);
                init.weight(&format!("down{i}.w"), &[ch, prev, 3, 3], prev * 9);
                init.constant(&format!("down{i}.b"), &[ch], 0.0);
            }
            for j in 0..blocks[i] {
                // Damping the second conv keeps each residual block close
                // to identity at init; with no normalization layers the
                // trunk's activation scale would otherwise double per block.
                for (conv, scale) in [("c1", 1.0), ("c2", RESIDUAL_TAIL_INIT_SCALE)] {
                    init.weight_scaled(
                        &format!("s{i}b{j}.{conv}.w"),
                        &[ch, ch / groups, 3, 3],
                        (ch / groups) * 9,
                        scale,
                    );
                    init.constant(&format!("s{i}b{j}.{conv}.b"), &[ch], 0.0);
                }
            }
            init.weight(&format!("lat{i}.w"), &[f, ch, 1, 1], ch);
            init.constant(&format!("lat{i}.b"), &[f], 0.0);
            init.weight(&format!("fpn{i}.w"), &[f, f, 3, 3], f * 9);
            init.constant(&format!("fpn{i}.b"), &[f], 0.0);
        }
    }

    for det in ["det_c", "det_m"] {
        let mut init = ComponentInit::new(&mut store, det, seed);
        init.weight("head.w", &[f, f, 3, 3], f * 9);
        init.constant("head.b", &[f], 0.0);
        init.weight_scaled("obj.w", &[1, f, 1, 1], f, HEAD_INIT_SCALE);
        // Negative prior keeps the focal term stable before any positives
        // are learned (background vastly outnumbers centers).
        init.constant("obj.b", &[1], -2.0);
        init.weight_scaled("cls.w", &[2, f, 1, 1], f, HEAD_INIT_SCALE);
        init.constant("cls.b", &[2], 0.0);
        init.weight_scaled("reg.w", &[4, f, 1, 1], f, HEAD_INIT_SCALE);
        init.constant("reg.b", &[4], 0.0);
    }

    for seg in ["seg_c", "seg_m"] {
        let mut init = ComponentInit::new(&mut store, seg, seed);
        for i in 0..levels - 1 {
            init.weight(&format!("up{i}.w"), &[f, f, 4, 4], f * 16);
            init.constant(&format!("up{i}.b"), &[f], 0.0);
        }
        init.weight("upf.w", &[f, f / 2, 4, 4], (f / 2) * 16);
        init.constant("upf.b", &[f / 2], 0.0);
        init.weight_scaled("out.w", &[2, f / 2, 1, 1], f / 2, HEAD_INIT_SCALE);
        init.constant("out.b", &[2], 0.0);
    }

    {
        let mut init = ComponentInit::new(&mut store, "pose_enc", seed);
        init.weight("enc1.w", &[2 * f, f, 3, 3], f * 9);
        init.constant("enc1.b", &[2 * f], 0.0);
        init.weight("enc2.w", &[2 * f, 2 * f, 3, 3], 2 * f * 9);
        init.constant("enc2.b", &[2 * f], 0.0);
    }
    {
        let mut init = ComponentInit::new(&mut store, "pose_dec", seed);
        init.weight("up.w", &[2 * f, f, 4, 4], f * 16);
        init.constant("up.b", &[f], 0.0);
        init.weight_scaled("out.w", &[cfg.num_keypoints, f, 3, 3], f * 9, HEAD_INIT_SCALE);
        init.constant("out.b", &[cfg.num_keypoints], 0.0);
    }
    {
        let mut init = ComponentInit::new(&mut store, "dom_cls", seed);
        init.weight("fc1.w", &[f, 2 * f], 2 * f);
        init.constant("fc1.b", &[f], 0.0);
        // Zero-initialized output layer: the classifier starts exactly
        // undecided (probability 0.5) regardless of its input.
        init.constant("fc2.w", &[1, f], 0.0);
        init.constant("fc2.b", &[1], 0.0);
    }

    Ok(store)
}
