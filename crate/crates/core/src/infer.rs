//! Evaluation-time inference: run the distribution-matched detection and
//! segmentation networks on a sample, then the shared pose network on each
//! instance. No gradients are recorded.

use ndarray::{Array3, ArrayD, Axis, Ix3};

use crate::error::{Error, Result};
use crate::geom::{BBox, Mask};
use crate::metrics::PosePrediction;
use crate::nets::{
    decode_detections, decode_pose, detect_forward, domain_components, fpn_encode,
    instance_feature_values, instance_masks_from_seg, pose_forward, segment_forward, Detection,
    ModelConfig, ParamStore, Session,
};
use crate::sample::{Domain, Sample};

/// Everything the evaluation stack needs from one image.
#[derive(Debug, Clone)]
pub struct SampleInference {
    /// Decoded, NMS-filtered detections of the matching-domain network.
    pub detections: Vec<Detection>,
    /// Instance masks aligned with `detections`.
    pub masks: Vec<Mask>,
    /// Empty-intersection (low segmentation confidence) flags per detection.
    pub low_confidence: Vec<bool>,
    /// Pose hypotheses aligned with `detections`; `None` when the detected
    /// box is too small to pool an ROI from.
    pub poses: Vec<Option<PosePrediction>>,
}

fn as3(v: &ArrayD<f32>) -> Array3<f32> {
    v.clone().into_dimensionality::<Ix3>().expect("rank-3 value")
}

/// Full detect → segment → pose pipeline on one sample. The sample's domain
/// tag routes it through its distribution's encoder and decoders; the pose
/// network is shared.
pub fn infer_sample(
    store: &ParamStore,
    mcfg: &ModelConfig,
    sample: &Sample,
) -> Result<SampleInference> {
    let (enc, det, seg) = domain_components(sample.domain);
    let image_hw = (sample.height(), sample.width());

    let mut sess = Session::new(store, false);
    let pyramid = fpn_encode(&mut sess, enc, &sample.image, mcfg)?;
    let head = detect_forward(&mut sess, det, &pyramid, mcfg);
    let seg_logits = segment_forward(&mut sess, seg, &pyramid, mcfg);
    let seg_probs_id = sess.g.sigmoid(seg_logits);

    let obj = as3(sess.g.value(head.obj_prob));
    let obj = obj.index_axis(Axis(0), 0).to_owned();
    let cls = as3(sess.g.value(head.cls_logits));
    let reg = as3(sess.g.value(head.reg));
    let detections = decode_detections(&obj, &cls, &reg, mcfg.heatmap_stride, image_hw);

    let seg_probs = as3(sess.g.value(seg_probs_id));
    let with_flags = instance_masks_from_seg(&seg_probs, &detections, image_hw);
    let finest = as3(sess.g.value(pyramid.levels[0]));

    let mut masks = Vec::with_capacity(detections.len());
    let mut low_confidence = Vec::with_capacity(detections.len());
    let mut poses = Vec::with_capacity(detections.len());
    for (i, (d, (mask, empty))) in detections.iter().zip(with_flags).enumerate() {
        let pose = match pose_on_roi(store, mcfg, &finest, &d.bbox, &mask, sample, i) {
            Ok((keypoints, peak_mean)) => Some(PosePrediction {
                keypoints,
                score: f64::from(d.score) * f64::from(peak_mean),
            }),
            Err(Error::InvalidBox { .. }) => None,
            Err(e) => return Err(e),
        };
        masks.push(mask);
        low_confidence.push(empty);
        poses.push(pose);
    }
    Ok(SampleInference {
        detections,
        masks,
        low_confidence,
        poses,
    })
}

/// Pose inference for one known instance of a sample (ground-truth box and
/// current annotation mask), bypassing the detector. The prediction's score
/// is the decoded heatmap peak mean.
pub fn infer_pose_on_instance(
    store: &ParamStore,
    mcfg: &ModelConfig,
    sample: &Sample,
    instance_index: usize,
) -> Result<PosePrediction> {
    let inst = sample.instances.get(instance_index).ok_or_else(|| {
        Error::invalid_arg(format!("instance index {instance_index} out of range"))
    })?;
    let (enc, _, _) = domain_components(sample.domain);
    let mut sess = Session::new(store, false);
    let pyramid = fpn_encode(&mut sess, enc, &sample.image, mcfg)?;
    let finest = as3(sess.g.value(pyramid.levels[0]));
    let (keypoints, peak_mean) = pose_on_roi(
        store,
        mcfg,
        &finest,
        &inst.bbox,
        &inst.mask,
        sample,
        instance_index,
    )?;
    Ok(PosePrediction {
        keypoints,
        score: f64::from(peak_mean),
    })
}

/// ROI-pool one instance from the finest pyramid level, run the pose
/// network, and decode keypoints back into image coordinates.
fn pose_on_roi(
    store: &ParamStore,
    mcfg: &ModelConfig,
    finest: &Array3<f32>,
    bbox: &BBox,
    mask: &Mask,
    sample: &Sample,
    instance_index: usize,
) -> Result<([crate::keypoint::Keypoint; crate::keypoint::NUM_KEYPOINTS], f32)> {
    let feature = instance_feature_values(
        store,
        finest,
        bbox,
        mask,
        mcfg,
        &sample.sample_id,
        instance_index,
        sample.domain,
    )?;
    let mut sess = Session::new(store, false);
    let feat = sess.g.constant(feature.tensor.into_dyn());
    let out = pose_forward(&mut sess, feat, mcfg);
    let maps = as3(sess.g.value(out.heatmaps));
    Ok(decode_pose(&maps, bbox))
}

/// The component names the given domain's full pipeline reads at inference
/// time (its distribution networks plus the shared pose branch).
pub fn inference_components(domain: Domain) -> [&'static str; 5] {
    let (enc, det, seg) = domain_components(domain);
    [enc, det, seg, "pose_enc", "pose_dec"]
}
