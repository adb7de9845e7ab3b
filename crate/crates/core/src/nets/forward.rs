//! Graph-building forward passes for every component, plus the value-level
//! codecs around them (detection target encoding/decoding, mask
//! downsampling, pose target rendering and keypoint decoding).

use ndarray::{Array2, Array3, ArrayD, Axis};

use crate::error::{Error, Result};
use crate::geom::{box_iou, BBox, Mask};
use crate::heatmap::render_heatmaps;
use crate::keypoint::{Keypoint, Visibility, NUM_KEYPOINTS};
use crate::losses::{DetTargets, FOCAL_ALPHA, FOCAL_GAMMA};
use crate::sample::{Category, Domain, Instance};
use crate::tensor::{as3, Graph, RoiRect, VarId};

use super::{ModelConfig, ParamStore, Session};

/// Negative-side slope of every LeakyReLU in the model.
pub const LEAKY_SLOPE: f32 = 0.1;
/// Detections below this objectness score are dropped before NMS.
pub const SCORE_THRESHOLD: f32 = 0.3;
/// IoU above which a lower-scored detection is suppressed.
pub const NMS_IOU: f32 = 0.5;
/// Segmentation probability threshold for instance mask extraction.
pub const SEG_THRESHOLD: f32 = 0.5;
/// Gaussian scale (in heatmap cells) of pose training targets.
pub const POSE_TARGET_SIGMA: f32 = 1.75;

/// Multi-resolution feature maps, finest (largest) level first.
/// Level i has shape (fpn_channels, H / 2^(i+1), W / 2^(i+1)).
#[derive(Debug)]
pub struct Pyramid {
    pub levels: Vec<VarId>,
}

fn leaky(sess: &mut Session, x: VarId) -> VarId {
    sess.g.leaky_relu(x, LEAKY_SLOPE)
}

fn conv(sess: &mut Session, x: VarId, name: &str, stride: usize, pad: usize, groups: usize) -> VarId {
    let w = sess.param(&format!("{name}.w"));
    let b = sess.param(&format!("{name}.b"));
    sess.g.conv2d(x, w, b, stride, pad, groups)
}

fn conv_t(sess: &mut Session, x: VarId, name: &str) -> VarId {
    let w = sess.param(&format!("{name}.w"));
    let b = sess.param(&format!("{name}.b"));
    sess.g.conv_t2d(x, w, b, 2, 1)
}

fn residual_block(sess: &mut Session, x: VarId, name: &str, groups: usize) -> VarId {
    let y = conv(sess, x, &format!("{name}.c1"), 1, 1, groups);
    let y = leaky(sess, y);
    let y = conv(sess, y, &format!("{name}.c2"), 1, 1, groups);
    let s = sess.g.add(x, y);
    leaky(sess, s)
}

/// Run one FPN encoder (`"enc_c"` or `"enc_m"`) over an (H, W, 3) image.
pub fn fpn_encode(
    sess: &mut Session,
    encoder: &str,
    image: &Array3<f32>,
    cfg: &ModelConfig,
) -> Result<Pyramid> {
    cfg.validate()?;
    let (h, w, ch) = image.dim();
    if ch != 3 {
        return Err(Error::ShapeMismatch {
            context: "encoder input channels",
            expected: vec![h, w, 3],
            got: vec![h, w, ch],
        });
    }
    let multiple = 1 << cfg.fpn_levels;
    for dim in [h, w] {
        if dim % multiple != 0 {
            return Err(Error::Indivisible {
                got: dim,
                required: multiple,
                context: "feature pyramid downsampling",
            });
        }
    }

    // (H, W, 3) -> (3, H, W)
    let chw = image.view().permuted_axes([2, 0, 1]).to_owned();
    let x0 = sess.g.constant(chw.into_dyn());
    let groups = cfg.backbone_size.groups();
    let blocks = cfg.blocks_per_stage();

    let mut x = conv(sess, x0, &format!("{encoder}/stem"), 2, 1, 1);
    x = leaky(sess, x);
    let mut stage_outputs = Vec::with_capacity(cfg.fpn_levels);
    for i in 0..cfg.fpn_levels {
        if i > 0 {
            x = conv(sess, x, &format!("{encoder}/down{i}"), 2, 1, 1);
            x = leaky(sess, x);
        }
        for j in 0..blocks[i] {
            x = residual_block(sess, x, &format!("{encoder}/s{i}b{j}"), groups);
        }
        stage_outputs.push(x);
    }

    // Lateral 1x1 projections, then top-down accumulation and smoothing.
    let mut levels = vec![VarId::default(); cfg.fpn_levels];
    let mut top: Option<VarId> = None;
    for i in (0..cfg.fpn_levels).rev() {
        let mut p = conv(sess, stage_outputs[i], &format!("{encoder}/lat{i}"), 1, 0, 1);
        if let Some(above) = top {
            let up = sess.g.upsample2x(above);
            p = sess.g.add(p, up);
        }
        top = Some(p);
        levels[i] = conv(sess, p, &format!("{encoder}/fpn{i}"), 1, 1, 1);
    }
    Ok(Pyramid { levels })
}

/// Parameter-free attention: each channel of `f` scaled by its own global
/// average, out[c, y, x] = f[c, y, x] * mean_{y', x'} f[c, y', x'].
pub fn spatial_attention(g: &mut Graph<f32>, f: VarId) -> VarId {
    let pooled = g.gap(f);
    g.channel_scale(f, pooled)
}

/// Value-level [`spatial_attention`] for callers outside a training graph.
pub fn spatial_attention_values(f: &Array3<f32>) -> Array3<f32> {
    let mut g = Graph::new();
    let id = g.constant(f.clone().into_dyn());
    let out = spatial_attention(&mut g, id);
    as3(g.value(out))
}

/// Detection head outputs (graph nodes) on the configured pyramid level.
pub struct DetHead {
    /// Objectness probability, (1, h, w), post-sigmoid.
    pub obj_prob: VarId,
    /// Category logits, (2, h, w).
    pub cls_logits: VarId,
    /// (left, top, right, bottom) offsets in `stride * REG_UNIT_STRIDES`
    /// units, (4, h, w).
    pub reg: VarId,
}

/// Run one detection decoder (`"det_c"` or `"det_m"`).
pub fn detect_forward(
    sess: &mut Session,
    decoder: &str,
    pyramid: &Pyramid,
    cfg: &ModelConfig,
) -> DetHead {
    let level = cfg.det_level().expect("validated config");
    let f = spatial_attention(&mut sess.g, pyramid.levels[level]);
    let t = conv(sess, f, &format!("{decoder}/head"), 1, 1, 1);
    let t = leaky(sess, t);
    let obj_logits = conv(sess, t, &format!("{decoder}/obj"), 1, 0, 1);
    DetHead {
        obj_prob: sess.g.sigmoid(obj_logits),
        cls_logits: conv(sess, t, &format!("{decoder}/cls"), 1, 0, 1),
        reg: conv(sess, t, &format!("{decoder}/reg"), 1, 0, 1),
    }
}

/// One decoded detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f32,
    pub category: Category,
}

/// Regression offsets are expressed in units of `stride * REG_UNIT_STRIDES`
/// so that typical pedestrian boxes encode to values of order one; raw
/// stride units put the targets near ten, which destabilises momentum SGD at
/// the pinned learning rate.
pub const REG_UNIT_STRIDES: f32 = 8.0;

/// Build per-cell targets for the detection head: the cell containing each
/// instance's box center becomes positive and regresses the distances from
/// its own center to the box edges, in units of `stride * REG_UNIT_STRIDES`.
pub fn encode_det_targets(
    instances: &[Instance],
    grid: (usize, usize),
    stride: usize,
) -> DetTargets<f32> {
    let (h, w) = grid;
    let s = stride as f32;
    let unit = s * REG_UNIT_STRIDES;
    let mut obj = Array2::<f32>::zeros((h, w));
    let mut classes = Array2::<usize>::zeros((h, w));
    let mut offsets = Array3::<f32>::zeros((4, h, w));
    let mut pos = Array2::<bool>::from_elem((h, w), false);
    for inst in instances {
        let (cx, cy) = inst.bbox.center();
        let c = ((cx / s) as usize).min(w.saturating_sub(1));
        let r = ((cy / s) as usize).min(h.saturating_sub(1));
        let (ccx, ccy) = ((c as f32 + 0.5) * s, (r as f32 + 0.5) * s);
        obj[[r, c]] = 1.0;
        classes[[r, c]] = inst.category.index();
        offsets[[0, r, c]] = (ccx - inst.bbox.x0) / unit;
        offsets[[1, r, c]] = (ccy - inst.bbox.y0) / unit;
        offsets[[2, r, c]] = (inst.bbox.x1 - ccx) / unit;
        offsets[[3, r, c]] = (inst.bbox.y1 - ccy) / unit;
        pos[[r, c]] = true;
    }
    DetTargets { obj, classes, offsets, pos }
}

/// Graph-side detection loss, mirroring `losses::det_loss`: focal objectness
/// over all cells plus smooth-L1 regression and categorical cross-entropy at
/// positive cells, averaged by positive count. The flag marks the
/// no-positive-cells case.
pub fn det_loss_graph(g: &mut Graph<f32>, head: &DetHead, targets: &DetTargets<f32>) -> (VarId, bool) {
    let n_pos = targets.num_pos();
    let obj_target = targets.obj.clone().insert_axis(Axis(0)).into_dyn();
    let focal = g.focal_bce_sum(head.obj_prob, obj_target, FOCAL_ALPHA as f32, FOCAL_GAMMA as f32);
    let mut total = focal;
    if n_pos > 0 {
        let (_, h, w) = (4usize, targets.obj.dim().0, targets.obj.dim().1);
        let weight = Array3::from_shape_fn((4, h, w), |(_, r, c)| {
            if targets.pos[[r, c]] {
                1.0f32
            } else {
                0.0
            }
        });
        let l1 = g.smooth_l1_sum(head.reg, targets.offsets.clone().into_dyn(), weight.into_dyn());
        let ce = g.softmax_ce_sum(head.cls_logits, targets.classes.clone(), targets.pos.clone());
        total = g.add(total, l1);
        total = g.add(total, ce);
    }
    let scaled = g.scale(total, 1.0 / n_pos.max(1) as f32);
    (scaled, n_pos == 0)
}

/// Decode head values into boxes: threshold objectness, invert the offset
/// encoding, clip to the image, and apply per-category greedy NMS.
pub fn decode_detections(
    obj_prob: &Array2<f32>,
    cls_logits: &Array3<f32>,
    reg: &Array3<f32>,
    stride: usize,
    image_hw: (usize, usize),
) -> Vec<Detection> {
    let (h, w) = obj_prob.dim();
    let s = stride as f32;
    let unit = s * REG_UNIT_STRIDES;
    let (img_h, img_w) = (image_hw.0 as f32, image_hw.1 as f32);
    let mut candidates = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let score = obj_prob[[r, c]];
            if score < SCORE_THRESHOLD {
                continue;
            }
            let (ccx, ccy) = ((c as f32 + 0.5) * s, (r as f32 + 0.5) * s);
            let x0 = (ccx - reg[[0, r, c]] * unit).clamp(0.0, img_w);
            let y0 = (ccy - reg[[1, r, c]] * unit).clamp(0.0, img_h);
            let x1 = (ccx + reg[[2, r, c]] * unit).clamp(0.0, img_w);
            let y1 = (ccy + reg[[3, r, c]] * unit).clamp(0.0, img_h);
            if x1 - x0 < 0.5 || y1 - y0 < 0.5 {
                continue;
            }
            let category = if cls_logits[[0, r, c]] >= cls_logits[[1, r, c]] {
                Category::Person
            } else {
                Category::Rider
            };
            let bbox = BBox::new(x0, y0, x1, y1).expect("clipped box is valid");
            candidates.push(Detection { bbox, score, category });
        }
    }
    nms(candidates, NMS_IOU)
}

/// Greedy per-category non-maximum suppression.
fn nms(mut dets: Vec<Detection>, iou_threshold: f32) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        let suppressed = kept.iter().any(|k| {
            k.category == d.category && box_iou(&k.bbox, &d.bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Run one segmentation decoder (`"seg_c"` or `"seg_m"`): fuse all
/// attention-gated pyramid levels coarsest-first through learned
/// deconvolutions (one per level), restoring full image resolution.
/// Returns per-category logits of shape (2, H, W).
pub fn segment_forward(
    sess: &mut Session,
    decoder: &str,
    pyramid: &Pyramid,
    cfg: &ModelConfig,
) -> VarId {
    let levels = cfg.fpn_levels;
    let mut x = spatial_attention(&mut sess.g, pyramid.levels[levels - 1]);
    for i in (0..levels - 1).rev() {
        x = conv_t(sess, x, &format!("{decoder}/up{i}"));
        let skip = spatial_attention(&mut sess.g, pyramid.levels[i]);
        x = sess.g.add(x, skip);
        x = leaky(sess, x);
    }
    x = conv_t(sess, x, &format!("{decoder}/upf"));
    x = leaky(sess, x);
    conv(sess, x, &format!("{decoder}/out"), 1, 0, 1)
}

/// Per-category ground-truth foreground maps: union of the visible masks
/// of instances of each category, shape (2, H, W).
pub fn seg_targets(instances: &[Instance], image_hw: (usize, usize)) -> Array3<f32> {
    let (h, w) = image_hw;
    let mut t = Array3::<f32>::zeros((2, h, w));
    for inst in instances {
        let k = inst.category.index();
        for ((r, c), &v) in inst.mask.indexed_iter() {
            if v {
                t[[k, r, c]] = 1.0;
            }
        }
    }
    t
}

/// Instance masks from a segmentation probability map: the thresholded
/// category plane intersected with each detection's box. The flag marks an
/// empty (low-confidence) intersection.
pub fn instance_masks_from_seg(
    probs: &Array3<f32>,
    detections: &[Detection],
    image_hw: (usize, usize),
) -> Vec<(Mask, bool)> {
    let (h, w) = image_hw;
    detections
        .iter()
        .map(|det| {
            let plane = probs.index_axis(Axis(0), det.category.index());
            let mask = Mask::from_shape_fn((h, w), |(r, c)| {
                plane[[r, c]] >= SEG_THRESHOLD
                    && det.bbox.contains(c as f32 + 0.5, r as f32 + 0.5)
            });
            let empty = !mask.iter().any(|&v| v);
            (mask, empty)
        })
        .collect()
}

/// A masked instance feature patch plus the box and index it came from.
#[derive(Debug, Clone)]
pub struct InstanceFeature {
    /// (fpn_channels, roi, roi).
    pub tensor: Array3<f32>,
    pub sample_id: String,
    pub instance_index: usize,
    pub domain: Domain,
}

impl InstanceFeature {
    pub fn validate(&self) -> Result<()> {
        if self.tensor.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_arg(format!(
                "non-finite instance feature for {}[{}]",
                self.sample_id, self.instance_index
            )));
        }
        Ok(())
    }
}

/// Area-average the visible-pixel mask over the box-aligned ROI grid, then
/// binarize at 0.5. Cells whose sub-rectangle contains no pixel centers
/// count as empty.
pub fn downsample_mask_roi(mask: &Mask, bbox: &BBox, roi: usize) -> Array2<f32> {
    let (img_h, img_w) = mask.dim();
    let cell_w = bbox.width() / roi as f32;
    let cell_h = bbox.height() / roi as f32;
    Array2::from_shape_fn((roi, roi), |(i, j)| {
        let xs = bbox.x0 + j as f32 * cell_w;
        let xe = xs + cell_w;
        let ys = bbox.y0 + i as f32 * cell_h;
        let ye = ys + cell_h;
        // Pixel (r, c) has center (c + 0.5, r + 0.5).
        let c0 = (xs - 0.5).ceil().max(0.0) as usize;
        let r0 = (ys - 0.5).ceil().max(0.0) as usize;
        let mut set = 0usize;
        let mut total = 0usize;
        let mut r = r0;
        while (r as f32 + 0.5) < ye && r < img_h {
            let mut c = c0;
            while (c as f32 + 0.5) < xe && c < img_w {
                total += 1;
                set += usize::from(mask[[r, c]]);
                c += 1;
            }
            r += 1;
        }
        if total > 0 && set * 2 >= total {
            1.0
        } else {
            0.0
        }
    })
}

/// ROI-align the finest pyramid level over `bbox`, then zero the cells the
/// binarized mask marks as hidden. `extra_mask` (training curriculum) is
/// multiplied in on top. Errors on boxes spanning fewer than two feature
/// cells on either side.
pub fn roi_extract_masked(
    sess: &mut Session,
    finest: VarId,
    bbox: &BBox,
    mask: &Mask,
    cfg: &ModelConfig,
    extra_mask: Option<&Array2<f32>>,
) -> Result<VarId> {
    let stride = cfg.level_stride(0) as f32;
    if bbox.width() / stride < 2.0 || bbox.height() / stride < 2.0 {
        return Err(Error::InvalidBox {
            x0: bbox.x0,
            y0: bbox.y0,
            x1: bbox.x1,
            y1: bbox.y1,
            reason: "spans fewer than two feature cells at the pose stride",
        });
    }
    let rect = RoiRect {
        x0: (bbox.x0 / stride) as f64,
        y0: (bbox.y0 / stride) as f64,
        x1: (bbox.x1 / stride) as f64,
        y1: (bbox.y1 / stride) as f64,
    };
    let roi = cfg.roi_size;
    let feat = sess.g.roi_align(finest, rect, roi);
    let mut m = downsample_mask_roi(mask, bbox, roi);
    if let Some(extra) = extra_mask {
        assert_eq!(extra.dim(), (roi, roi), "extra mask grid");
        m = m * extra;
    }
    let channels = cfg.fpn_channels;
    let full = ArrayD::from_shape_fn(vec![channels, roi, roi], |ix| m[[ix[1], ix[2]]]);
    Ok(sess.g.mask_mul(feat, full))
}

/// Value-level ROI extraction for inference and tests.
pub fn instance_feature_values(
    store: &ParamStore,
    finest_values: &Array3<f32>,
    bbox: &BBox,
    mask: &Mask,
    cfg: &ModelConfig,
    sample_id: &str,
    instance_index: usize,
    domain: Domain,
) -> Result<InstanceFeature> {
    let mut sess = Session::new(store, false);
    let finest = sess.g.constant(finest_values.clone().into_dyn());
    let id = roi_extract_masked(&mut sess, finest, bbox, mask, cfg, None)?;
    let feature = InstanceFeature {
        tensor: as3(sess.g.value(id)),
        sample_id: sample_id.to_string(),
        instance_index,
        domain,
    };
    feature.validate()?;
    Ok(feature)
}

/// Pose network outputs for one instance.
pub struct PoseOut {
    /// Sigmoid keypoint heatmaps, (13, 2r, 2r).
    pub heatmaps: VarId,
    /// Globally pooled pose-encoder embedding, (2 * fpn_channels,).
    pub embedding: VarId,
}

/// Run the shared pose encoder/decoder on one masked instance feature.
pub fn pose_forward(sess: &mut Session, feat: VarId, _cfg: &ModelConfig) -> PoseOut {
    let e = conv(sess, feat, "pose_enc/enc1", 1, 1, 1);
    let e = leaky(sess, e);
    let e = conv(sess, e, "pose_enc/enc2", 1, 1, 1);
    let e = leaky(sess, e);
    let embedding = sess.g.gap(e);
    let u = conv_t(sess, e, "pose_dec/up");
    let u = leaky(sess, u);
    let logits = conv(sess, u, "pose_dec/out", 1, 1, 1);
    PoseOut {
        heatmaps: sess.g.sigmoid(logits),
        embedding,
    }
}

/// Domain classifier applied to a pooled pose embedding. The input passes
/// through gradient reversal (strength `cfg.grl_lambda`), so minimizing the
/// classifier's loss drives the pose encoder toward domain-invariant
/// features. Returns the probability that the instance came from the
/// annotated (source) distribution, shaped (1,).
pub fn domain_classify(sess: &mut Session, embedding: VarId, cfg: &ModelConfig) -> VarId {
    let x = sess.g.grad_reverse(embedding, cfg.grl_lambda);
    let w1 = sess.param("dom_cls/fc1.w");
    let b1 = sess.param("dom_cls/fc1.b");
    let h = sess.g.linear(x, w1, b1);
    let h = leaky(sess, h);
    let w2 = sess.param("dom_cls/fc2.w");
    let b2 = sess.param("dom_cls/fc2.b");
    let o = sess.g.linear(h, w2, b2);
    sess.g.sigmoid(o)
}

/// Map a keypoint's image coordinates into the heatmap grid of an instance
/// box: grid node `u` sits at box-relative fraction `(u + 0.5) / size`.
fn keypoint_to_grid(kp: &Keypoint, bbox: &BBox, size: usize) -> (f32, f32) {
    let u = (kp.x + 0.5 - bbox.x0) / bbox.width() * size as f32 - 0.5;
    let v = (kp.y + 0.5 - bbox.y0) / bbox.height() * size as f32 - 0.5;
    (u, v)
}

/// Render ground-truth pose heatmaps for one instance in its box frame.
/// Returns the target tensor (13, size, size) and the per-channel
/// supervision mask (labeled keypoints only — visible or not).
pub fn pose_target_maps(
    keypoints: &[Keypoint; NUM_KEYPOINTS],
    bbox: &BBox,
    size: usize,
) -> Result<(Array3<f32>, Vec<bool>)> {
    let mut grid_kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
    let mut include = vec![false; NUM_KEYPOINTS];
    for (k, kp) in keypoints.iter().enumerate() {
        if !kp.visibility.is_labeled() {
            continue;
        }
        let (u, v) = keypoint_to_grid(kp, bbox, size);
        grid_kps[k] = Keypoint { x: u, y: v, visibility: kp.visibility };
        include[k] = true;
    }
    let maps = render_heatmaps(&grid_kps, (size, size), 1, POSE_TARGET_SIGMA)?;
    Ok((maps.maps, include))
}

/// Decode predicted heatmaps back to image-frame keypoints. Every channel
/// decodes (argmax), and the mean peak value doubles as the instance's
/// pose confidence score.
pub fn decode_pose(maps: &Array3<f32>, bbox: &BBox) -> ([Keypoint; NUM_KEYPOINTS], f32) {
    let (k_n, rows, cols) = maps.dim();
    debug_assert_eq!(k_n, NUM_KEYPOINTS);
    let mut out = [Keypoint::not_labeled(); NUM_KEYPOINTS];
    let mut peak_sum = 0.0;
    for k in 0..NUM_KEYPOINTS {
        let mut best = f32::NEG_INFINITY;
        let mut best_rc = (0usize, 0usize);
        for r in 0..rows {
            for c in 0..cols {
                if maps[[k, r, c]] > best {
                    best = maps[[k, r, c]];
                    best_rc = (r, c);
                }
            }
        }
        peak_sum += best;
        let x = bbox.x0 + (best_rc.1 as f32 + 0.5) / cols as f32 * bbox.width() - 0.5;
        let y = bbox.y0 + (best_rc.0 as f32 + 0.5) / rows as f32 * bbox.height() - 0.5;
        out[k] = Keypoint { x, y, visibility: Visibility::LabeledVisible };
    }
    (out, peak_sum / NUM_KEYPOINTS as f32)
}
