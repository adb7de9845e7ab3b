//! Synthetic dual-distribution pedestrian scenes.
//!
//! Two shipped presets render articulated capsule-limb pedestrians over
//! procedural backgrounds with deliberately different appearance (hue,
//! texture scale, noise), reproducing the annotation asymmetry of the
//! problem setting: the source distribution carries 13-keypoint pose labels,
//! the target distribution never does. A separate occlusion synthesizer
//! masks controlled fractions of fully visible pedestrians for evaluation
//! sweeps.
//!
//! Everything is a pure function of (params, seed): rasters are bit-identical
//! across runs and platforms.

mod io;
mod raster;

pub use io::{dataset_digest, load_dataset, sample_digest, save_dataset};
pub use raster::PedestrianSpec;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{mask_bbox, mask_count, Mask};
use crate::keypoint::{Keypoint, Visibility, NUM_KEYPOINTS};
use crate::rng::{derive_seed, stream_rng};
use crate::sample::{Category, Domain, Instance, Sample};
use raster::Pt;

/// RNG stream indices hung off each sample seed.
const STREAM_SCENE: u64 = 0;
const STREAM_BACKGROUND: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_OCCLUDE: u64 = 3;

/// Tolerance on the achieved cleared fraction of [`occlude_instance`].
pub const OCCLUSION_TOLERANCE: f32 = 0.02;

/// Appearance and scene statistics for one data distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionParams {
    pub domain: Domain,
    /// (H, W).
    pub image_size: (usize, usize),
    pub pedestrians_min: usize,
    pub pedestrians_max: usize,
    pub limb_length_scale: f32,
    pub limb_width: f32,
    /// Base body hue in [0, 1).
    pub body_hue: f32,
    /// Plasma feature size in pixels; larger = smoother background.
    pub background_texture_scale: f32,
    /// Additive pixel noise amplitude.
    pub noise_level: f32,
    /// Probability that a pedestrian gets a scene occluder strip.
    pub occluder_rate: f32,
}

impl DistributionParams {
    /// Pose-annotated distribution (warm bodies, fine texture, low noise).
    pub fn source_preset() -> Self {
        DistributionParams {
            domain: Domain::Source,
            image_size: (64, 64),
            pedestrians_min: 1,
            pedestrians_max: 3,
            limb_length_scale: 1.0,
            limb_width: 1.0,
            body_hue: 0.07,
            background_texture_scale: 7.0,
            noise_level: 0.02,
            occluder_rate: 0.25,
        }
    }

    /// Pose-free distribution: shifted hue, coarser texture, more noise.
    pub fn target_preset() -> Self {
        DistributionParams {
            domain: Domain::Target,
            image_size: (64, 64),
            pedestrians_min: 1,
            pedestrians_max: 3,
            limb_length_scale: 1.0,
            limb_width: 1.05,
            body_hue: 0.58,
            background_texture_scale: 14.0,
            noise_level: 0.06,
            occluder_rate: 0.35,
        }
    }

    /// Same appearance, different domain tag (used for labelled eval splits
    /// rendered in the target style).
    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Single fully-visible pedestrian per image: the layout used by
    /// occlusion sweeps, where the sweep itself controls occlusion.
    pub fn eval_layout(mut self) -> Self {
        self.pedestrians_min = 1;
        self.pedestrians_max = 1;
        self.occluder_rate = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 16 || w < 16 {
            return Err(Error::invalid_arg(format!("image size {h}x{w} below 16x16")));
        }
        if self.pedestrians_min < 1 || self.pedestrians_min > self.pedestrians_max {
            return Err(Error::invalid_arg("pedestrian count range invalid"));
        }
        if !(0.0..1.0).contains(&self.body_hue) {
            return Err(Error::invalid_arg("body_hue must be in [0, 1)"));
        }
        for (name, v) in [
            ("limb_length_scale", self.limb_length_scale),
            ("limb_width", self.limb_width),
            ("background_texture_scale", self.background_texture_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid_arg(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return Err(Error::invalid_arg("noise_level must be in [0, 0.5]"));
        }
        if !(0.0..=1.0).contains(&self.occluder_rate) {
            return Err(Error::invalid_arg("occluder_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

/// An axis-aligned scene occluder, half-open integer pixel rect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneOccluder {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub shade: f32,
}

/// Everything needed to re-render one scene bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub rng_seed: u64,
    pub pedestrians: Vec<PedestrianSpec>,
    pub occluders: Vec<SceneOccluder>,
}

impl SceneSpec {
    /// Draw a scene layout from the distribution. All randomness comes from
    /// the scene stream of `seed`.
    pub fn sample(params: &DistributionParams, seed: u64) -> Result<SceneSpec> {
        params.validate()?;
        let (img_h, img_w) = params.image_size;
        let mut rng = stream_rng(seed, STREAM_SCENE);
        let n = rng.random_range(params.pedestrians_min..=params.pedestrians_max);
        let mut pedestrians = Vec::with_capacity(n);
        let mut occluders = Vec::new();
        for _ in 0..n {
            let height = img_h as f32 * rng.random_range(0.45..0.80_f32);
            let category = if rng.random::<f32>() < 0.35 {
                Category::Rider
            } else {
                Category::Person
            };
            let lean = rng.random_range(-0.12..0.12_f32);
            let arm_angles = [
                rng.random_range(0.1..0.7_f32),
                rng.random_range(-0.2..0.5_f32),
                -rng.random_range(0.1..0.7_f32),
                -rng.random_range(-0.2..0.5_f32),
            ];
            let leg_angles = if category == Category::Rider {
                // Seated: thighs forward, shins tucked back.
                [
                    rng.random_range(0.5..0.9_f32),
                    -rng.random_range(0.9..1.3_f32),
                    rng.random_range(0.4..0.8_f32),
                    -rng.random_range(0.8..1.2_f32),
                ]
            } else {
                [
                    rng.random_range(-0.1..0.35_f32),
                    -rng.random_range(0.0..0.25_f32),
                    -rng.random_range(-0.1..0.35_f32),
                    rng.random_range(0.0..0.25_f32),
                ]
            };
            let hue_jitter = rng.random_range(-0.04..0.04_f32);
            let hue = (params.body_hue + hue_jitter).rem_euclid(1.0);
            let cx = rng.random_range(0.2..0.8_f32) * img_w as f32;
            let cy = rng.random_range(0.45..0.70_f32) * img_h as f32;

            let mut spec = PedestrianSpec {
                center_x: cx,
                center_y: cy,
                height,
                lean,
                arm_angles,
                leg_angles,
                hue,
                category,
            };
            fit_into_image(&mut spec, params, (img_h, img_w));
            // Scene occluder draw happens here so the RNG sequence is
            // per-pedestrian regardless of placement.
            let wants_occluder = rng.random::<f32>() < params.occluder_rate;
            let strip = (
                rng.random_range(0.18..0.38_f32),
                rng.random_range(0.0..1.0_f32),
                0.18 + 0.2 * rng.random::<f32>(),
            );
            if wants_occluder {
                let (_, caps) =
                    raster::skeleton(&spec, params.limb_length_scale, params.limb_width);
                let ext = raster::capsule_extent(&caps);
                let body_w = ext.2 - ext.0;
                let strip_w = (body_w * strip.0).max(2.0);
                let x0 = ext.0 + strip.1 * (body_w - strip_w).max(0.0);
                occluders.push(SceneOccluder {
                    x0: (x0.floor().max(0.0)) as usize,
                    y0: ((ext.1 - 2.0).floor().max(0.0)) as usize,
                    x1: ((x0 + strip_w).ceil().min(img_w as f32)) as usize,
                    y1: ((ext.3 + 2.0).ceil().min(img_h as f32)) as usize,
                    shade: strip.2,
                });
            }
            pedestrians.push(spec);
        }
        Ok(SceneSpec {
            rng_seed: seed,
            pedestrians,
            occluders,
        })
    }
}

/// Translate a pedestrian so its capsule extent stays ≥ 1 px inside the
/// image border (keeps full-body masks unclipped).
fn fit_into_image(spec: &mut PedestrianSpec, params: &DistributionParams, grid: (usize, usize)) {
    let (img_h, img_w) = grid;
    let (_, caps) = raster::skeleton(spec, params.limb_length_scale, params.limb_width);
    let (x0, y0, x1, y1) = raster::capsule_extent(&caps);
    let margin = 1.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    if x0 < margin {
        dx = margin - x0;
    }
    if x1 + dx > img_w as f32 - margin {
        dx -= x1 + dx - (img_w as f32 - margin);
    }
    if y0 < margin {
        dy = margin - y0;
    }
    if y1 + dy > img_h as f32 - margin {
        dy -= y1 + dy - (img_h as f32 - margin);
    }
    spec.center_x += dx;
    spec.center_y += dy;
}

/// Render a sampled scene. Pure function of (params, spec, sample_id).
pub fn render_scene(params: &DistributionParams, spec: &SceneSpec, sample_id: &str) -> Result<Sample> {
    params.validate()?;
    let (img_h, img_w) = params.image_size;

    // Background plasma.
    let mut bg_rng = stream_rng(spec.rng_seed, STREAM_BACKGROUND);
    let mut phases = [0.0f32; 6];
    for p in phases.iter_mut() {
        *p = bg_rng.random_range(0.0..std::f32::consts::TAU);
    }
    let mut image = Array3::from_shape_fn((img_h, img_w, 3), |(r, c, ch)| {
        raster::background_value(c, r, ch, params.background_texture_scale, &phases)
    });

    // Paint pedestrians far-to-near (shorter = farther).
    let mut owner = Array2::<Option<u16>>::from_elem((img_h, img_w), None);
    let mut order: Vec<usize> = (0..spec.pedestrians.len()).collect();
    order.sort_by(|&a, &b| {
        spec.pedestrians[a]
            .height
            .partial_cmp(&spec.pedestrians[b].height)
            .expect("heights are finite")
    });
    let mut joints = vec![[Pt { x: 0.0, y: 0.0 }; NUM_KEYPOINTS]; spec.pedestrians.len()];
    let mut full_masks = Vec::with_capacity(spec.pedestrians.len());
    for (i, ped) in spec.pedestrians.iter().enumerate() {
        let (j, caps) = raster::skeleton(ped, params.limb_length_scale, params.limb_width);
        joints[i] = j;
        full_masks.push(raster::rasterize_mask(&caps, (img_h, img_w)));
    }
    for &i in &order {
        let ped = &spec.pedestrians[i];
        let (_, caps) = raster::skeleton(ped, params.limb_length_scale, params.limb_width);
        let rgb = raster::hsv_to_rgb(ped.hue, 0.55, 0.62);
        raster::paint_capsules(&mut image, &mut owner, &caps, rgb, i as u16);
    }

    // Scene occluders sit in front of everyone.
    for occ in &spec.occluders {
        for r in occ.y0..occ.y1.min(img_h) {
            for c in occ.x0..occ.x1.min(img_w) {
                let texture = 0.04 * libm::sinf(c as f32 * 0.9 + r as f32 * 1.3);
                for ch in 0..3 {
                    image[[r, c, ch]] = (occ.shade + texture).clamp(0.0, 1.0);
                }
                owner[[r, c]] = None;
            }
        }
    }

    // Pixel noise (Irwin-Hall, mean 0) then quantization to the u8 grid.
    let mut noise_rng = stream_rng(spec.rng_seed, STREAM_NOISE);
    for v in image.iter_mut() {
        let n: f32 = noise_rng.random::<f32>() + noise_rng.random::<f32>()
            + noise_rng.random::<f32>()
            + noise_rng.random::<f32>()
            - 2.0;
        *v = raster::quantize_u8(*v + params.noise_level * n);
    }

    // Collect instances; fully hidden pedestrians are dropped.
    let mut instances = Vec::new();
    for (i, ped) in spec.pedestrians.iter().enumerate() {
        let visible = Mask::from_shape_fn((img_h, img_w), |(r, c)| owner[[r, c]] == Some(i as u16));
        let vis_count = mask_count(&visible);
        if vis_count == 0 {
            continue;
        }
        let full_count = mask_count(&full_masks[i]);
        let bbox = mask_bbox(&full_masks[i])
            .ok_or_else(|| Error::Dataset("empty full-body mask".into()))?;
        let keypoints = (params.domain == Domain::Source).then(|| {
            let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
            for (k, j) in joints[i].iter().enumerate() {
                let (pr, pc) = (j.y as isize, j.x as isize);
                let on_body = pr >= 0
                    && pc >= 0
                    && (pr as usize) < img_h
                    && (pc as usize) < img_w
                    && owner[[pr as usize, pc as usize]] == Some(i as u16);
                kps[k] = Keypoint {
                    x: j.x - 0.5,
                    y: j.y - 0.5,
                    visibility: if on_body {
                        Visibility::LabeledVisible
                    } else {
                        Visibility::LabeledInvisible
                    },
                };
            }
            kps
        });
        instances.push(Instance {
            bbox,
            mask: visible,
            keypoints,
            category: ped.category,
            visibility_ratio: vis_count as f32 / full_count as f32,
        });
    }

    let sample = Sample {
        image,
        instances,
        domain: params.domain,
        sample_id: sample_id.to_string(),
        rng_seed: spec.rng_seed,
    };
    sample.validate()?;
    Ok(sample)
}

fn default_sample_id(domain: Domain, seed: u64) -> String {
    let prefix = match domain {
        Domain::Source => "src",
        Domain::Target => "tgt",
    };
    format!("{prefix}-{seed:016x}")
}

/// Generate one scene. Deterministic in (params, seed).
pub fn generate_sample(params: &DistributionParams, seed: u64) -> Result<Sample> {
    let spec = SceneSpec::sample(params, seed)?;
    render_scene(params, &spec, &default_sample_id(params.domain, seed))
}

/// Overlay rectangular occluders on one fully visible instance until the
/// cleared fraction of its mask is within ±0.02 of `fraction`. Image pixels
/// under each rectangle become a background-like patch; every instance mask
/// loses the covered pixels, visibility ratios are rescaled accordingly, and
/// covered keypoints flip to labeled-invisible. Keypoint coordinates are
/// never changed.
pub fn occlude_instance(
    s: &Sample,
    instance_index: usize,
    fraction: f32,
    seed: u64,
) -> Result<Sample> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid_arg(format!(
            "occlusion fraction must be in [0, 1), got {fraction}"
        )));
    }
    let inst = s
        .instances
        .get(instance_index)
        .ok_or_else(|| Error::invalid_arg(format!("instance index {instance_index} out of range")))?;
    if inst.visibility_ratio < 1.0 {
        return Err(Error::invalid_arg(format!(
            "instance {} is already occluded (visibility {})",
            instance_index, inst.visibility_ratio
        )));
    }

    let mut out = s.clone();
    out.rng_seed = derive_seed(s.rng_seed, seed);
    if fraction == 0.0 {
        return Ok(out);
    }

    let (img_h, img_w) = (s.height(), s.width());
    let n0 = mask_count(&inst.mask);
    let old_counts: Vec<usize> = out.instances.iter().map(|i| mask_count(&i.mask)).collect();
    let mut rng = stream_rng(out.rng_seed, STREAM_OCCLUDE);
    let mut cleared = 0usize;
    let mut applied: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut iterations = 0usize;

    while (cleared as f32) < (fraction - 0.005) * n0 as f32 {
        iterations += 1;
        if iterations > 5_000 {
            return Err(Error::Dataset(format!(
                "could not reach occlusion fraction {fraction} (mask of {n0} px)"
            )));
        }
        // Centre each rectangle on a still-visible pixel of the target.
        let visible_px: Vec<(usize, usize)> = out.instances[instance_index]
            .mask
            .indexed_iter()
            .filter_map(|((r, c), &v)| v.then_some((r, c)))
            .collect();
        if visible_px.is_empty() {
            break;
        }
        let (cr, cc) = visible_px[rng.random_range(0..visible_px.len())];
        let deficit = (fraction * n0 as f32 - cleared as f32).max(1.0);
        let aspect = rng.random_range(0.7..1.4_f32);
        let mut rw = ((deficit.sqrt() * aspect).round() as usize).max(1);
        let mut rh = ((deficit.sqrt() / aspect).round() as usize).max(1);
        loop {
            let x0 = cc.saturating_sub(rw / 2);
            let y0 = cr.saturating_sub(rh / 2);
            let x1 = (x0 + rw).min(img_w);
            let y1 = (y0 + rh).min(img_h);
            let newly = rect_mask_overlap(&out.instances[instance_index].mask, x0, y0, x1, y1);
            if (cleared + newly) as f32 <= (fraction + 0.015) * n0 as f32 {
                if newly > 0 {
                    apply_occluder(&mut out, instance_index, x0, y0, x1, y1, &mut rng);
                    cleared += newly;
                    applied.push((x0, y0, x1, y1));
                }
                break;
            }
            if rw == 1 && rh == 1 {
                break; // every option overshoots; resample the centre
            }
            rw = (rw / 2).max(1);
            rh = (rh / 2).max(1);
        }
    }

    // Rescale visibility ratios: full extent is unchanged, so the new ratio
    // is the old one scaled by the surviving visible fraction.
    for (i, inst) in out.instances.iter_mut().enumerate() {
        let new_count = mask_count(&inst.mask);
        if old_counts[i] > 0 {
            inst.visibility_ratio =
                (inst.visibility_ratio * new_count as f32 / old_counts[i] as f32).clamp(0.0, 1.0);
        }
        if let Some(kps) = inst.keypoints.as_mut() {
            for kp in kps.iter_mut() {
                if kp.visibility == Visibility::LabeledVisible {
                    let (pr, pc) = (kp.y.round() as isize, kp.x.round() as isize);
                    let covered = applied.iter().any(|&(x0, y0, x1, y1)| {
                        pr >= y0 as isize && pr < y1 as isize && pc >= x0 as isize && pc < x1 as isize
                    });
                    if covered {
                        kp.visibility = Visibility::LabeledInvisible;
                    }
                }
            }
        }
    }

    out.validate()?;
    Ok(out)
}

fn rect_mask_overlap(mask: &Mask, x0: usize, y0: usize, x1: usize, y1: usize) -> usize {
    let mut n = 0;
    for r in y0..y1 {
        for c in x0..x1 {
            if mask[[r, c]] {
                n += 1;
            }
        }
    }
    n
}

/// Paint one occluder rectangle and clear it from every instance mask.
/// An instance that would lose its last visible pixel keeps its mask (the
/// synthesizer never silently deletes instances).
fn apply_occluder<R: Rng>(
    s: &mut Sample,
    target: usize,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    rng: &mut R,
) {
    let base = 0.38 + 0.18 * rng.random::<f32>();
    for r in y0..y1 {
        for c in x0..x1 {
            let n: f32 = rng.random::<f32>() - 0.5;
            let v = raster::quantize_u8(base + 0.06 * n);
            for ch in 0..3 {
                s.image[[r, c, ch]] = v;
            }
        }
    }
    for (i, inst) in s.instances.iter_mut().enumerate() {
        let overlap = rect_mask_overlap(&inst.mask, x0, y0, x1, y1);
        if overlap == 0 {
            continue;
        }
        if i != target && overlap == mask_count(&inst.mask) {
            continue;
        }
        for r in y0..y1 {
            for c in x0..x1 {
                inst.mask[[r, c]] = false;
            }
        }
    }
}

/// A generated dataset plus the manifest that reproduces it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub params: DistributionParams,
    pub base_seed: u64,
    pub sample_ids: Vec<String>,
    pub sample_seeds: Vec<u64>,
    pub params_hash: String,
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

pub fn params_hash(params: &DistributionParams) -> Result<String> {
    let json = serde_json::to_string(params)?;
    Ok(crate::rng::hex_digest(json.as_bytes()))
}

/// Generate `n` samples with counter-derived per-sample seeds.
pub fn build_dataset(params: &DistributionParams, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid_arg("dataset size must be positive"));
    }
    params.validate()?;
    let mut samples = Vec::with_capacity(n);
    let mut sample_ids = Vec::with_capacity(n);
    let mut sample_seeds = Vec::with_capacity(n);
    for i in 0..n {
        let s_seed = derive_seed(seed, i as u64);
        let id = format!("{}-{i:05}", default_sample_id(params.domain, seed));
        let spec = SceneSpec::sample(params, s_seed)?;
        samples.push(render_scene(params, &spec, &id)?);
        sample_ids.push(id);
        sample_seeds.push(s_seed);
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            params: params.clone(),
            base_seed: seed,
            sample_ids,
            sample_seeds,
            params_hash: params_hash(params)?,
        },
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_bit_identical() {
        let params = DistributionParams::source_preset();
        let a = generate_sample(&params, 99).unwrap();
        let b = generate_sample(&params, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_sample(&params, 100).unwrap();
        assert_ne!(a.sample_id, c.sample_id);
    }

    #[test]
    fn source_has_keypoints_target_does_not() {
        for seed in 0..20u64 {
            let src = generate_sample(&DistributionParams::source_preset(), seed).unwrap();
            for inst in &src.instances {
                assert!(inst.keypoints.is_some());
            }
            let tgt = generate_sample(&DistributionParams::target_preset(), seed).unwrap();
            for inst in &tgt.instances {
                assert!(inst.keypoints.is_none());
            }
        }
    }

    #[test]
    fn unoccluded_pedestrian_has_ratio_one_and_keypoints_in_box() {
        let params = DistributionParams::source_preset().eval_layout();
        let mut checked = 0;
        for seed in 0..30u64 {
            let s = generate_sample(&params, seed).unwrap();
            for inst in &s.instances {
                if inst.visibility_ratio == 1.0 {
                    checked += 1;
                    for kp in inst.keypoints.as_ref().unwrap() {
                        if kp.visibility == Visibility::LabeledVisible {
                            assert!(
                                inst.bbox.contains(kp.x + 0.5, kp.y + 0.5),
                                "visible keypoint outside mask bbox"
                            );
                        }
                    }
                }
            }
        }
        assert!(checked >= 20, "only {checked} fully visible instances seen");
    }

    #[test]
    fn visible_keypoints_sit_on_mask_pixels() {
        let params = DistributionParams::source_preset();
        for seed in 0..25u64 {
            let s = generate_sample(&params, seed).unwrap();
            for inst in &s.instances {
                for kp in inst.keypoints.as_ref().unwrap() {
                    if kp.visibility != Visibility::LabeledVisible {
                        continue;
                    }
                    let (r, c) = (kp.y.round() as isize, kp.x.round() as isize);
                    let near = (-2..=2_isize).any(|dr| {
                        (-2..=2_isize).any(|dc| {
                            let (rr, cc) = (r + dr, c + dc);
                            rr >= 0
                                && cc >= 0
                                && (rr as usize) < s.height()
                                && (cc as usize) < s.width()
                                && inst.mask[[rr as usize, cc as usize]]
                        })
                    });
                    assert!(near, "visible keypoint further than 2 px from mask");
                }
            }
        }
    }

    #[test]
    fn presets_differ_in_hue_texture_noise() {
        let s = DistributionParams::source_preset();
        let t = DistributionParams::target_preset();
        assert_ne!(s.body_hue, t.body_hue);
        assert_ne!(s.background_texture_scale, t.background_texture_scale);
        assert_ne!(s.noise_level, t.noise_level);
    }

    #[test]
    fn scene_spec_rerender_is_identical() {
        let params = DistributionParams::target_preset();
        let spec = SceneSpec::sample(&params, 5).unwrap();
        let a = render_scene(&params, &spec, "x").unwrap();
        let b = render_scene(&params, &spec, "x").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn occlusion_zero_is_identity_except_seed() {
        let params = DistributionParams::source_preset().eval_layout();
        let s = generate_sample(&params, 3).unwrap();
        let o = occlude_instance(&s, 0, 0.0, 11).unwrap();
        assert_eq!(s.image, o.image);
        assert_eq!(s.instances, o.instances);
        assert_ne!(s.rng_seed, o.rng_seed);
    }

    #[test]
    fn occlusion_hits_requested_fraction() {
        let params = DistributionParams::source_preset().eval_layout();
        for seed in 0..10u64 {
            let s = generate_sample(&params, seed).unwrap();
            let n0 = mask_count(&s.instances[0].mask);
            for fraction in [0.2f32, 0.5, 0.7] {
                let o = occlude_instance(&s, 0, fraction, seed + 100).unwrap();
                let cleared = 1.0 - mask_count(&o.instances[0].mask) as f32 / n0 as f32;
                assert!(
                    (cleared - fraction).abs() <= OCCLUSION_TOLERANCE,
                    "seed {seed} fraction {fraction}: cleared {cleared}"
                );
                assert!((o.instances[0].visibility_ratio - (1.0 - cleared)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn occlusion_rejects_bad_arguments() {
        let params = DistributionParams::source_preset().eval_layout();
        let s = generate_sample(&params, 1).unwrap();
        assert!(occlude_instance(&s, 0, 1.0, 0).is_err());
        assert!(occlude_instance(&s, 0, -0.1, 0).is_err());
        assert!(occlude_instance(&s, 99, 0.3, 0).is_err());
        let once = occlude_instance(&s, 0, 0.3, 0).unwrap();
        assert!(occlude_instance(&once, 0, 0.3, 0).is_err(), "double occlusion must fail");
    }

    #[test]
    fn occlusion_keeps_keypoint_coordinates() {
        let params = DistributionParams::source_preset().eval_layout();
        let s = generate_sample(&params, 7).unwrap();
        let o = occlude_instance(&s, 0, 0.5, 42).unwrap();
        let before = s.instances[0].keypoints.unwrap();
        let after = o.instances[0].keypoints.unwrap();
        let mut flipped = 0;
        for (b, a) in before.iter().zip(after.iter()) {
            assert_eq!((b.x, b.y), (a.x, a.y), "coordinates must not move");
            if b.visibility == Visibility::LabeledVisible
                && a.visibility == Visibility::LabeledInvisible
            {
                flipped += 1;
            }
            assert!(a.visibility.is_labeled());
        }
        assert!(flipped >= 1, "a 50% occlusion should cover some keypoint");
    }

    #[test]
    fn build_dataset_counts_and_determinism() {
        let params = DistributionParams::source_preset();
        let one = build_dataset(&params, 1, 8).unwrap();
        assert_eq!(one.samples.len(), 1);
        assert_eq!(one.manifest.sample_seeds[0], derive_seed(8, 0));

        let a = build_dataset(&params, 5, 8).unwrap();
        let b = build_dataset(&params, 5, 8).unwrap();
        assert_eq!(a.manifest, b.manifest);
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x, y);
        }
        assert!(build_dataset(&params, 0, 8).is_err());
    }

    #[test]
    fn source_dataset_all_instances_have_13_keypoints() {
        let ds = build_dataset(&DistributionParams::source_preset(), 100, 21).unwrap();
        let mut instances = 0;
        for s in &ds.samples {
            for inst in &s.instances {
                assert_eq!(inst.keypoints.as_ref().map(|k| k.len()), Some(NUM_KEYPOINTS));
                instances += 1;
            }
        }
        assert!(instances >= 100);
    }
}
