//! Instance segmentation IoU: per category, the mean over ground-truth
//! instances of their greedily matched predicted-mask IoU.

use crate::error::Result;
use crate::geom::{mask_iou, Mask};
use crate::sample::Category;

/// A binary instance mask with its category.
#[derive(Debug, Clone)]
pub struct CategorizedMask {
    pub mask: Mask,
    pub category: Category,
}

/// Mean best-match IoU for one category; `None` when the category has no
/// ground-truth instances.
///
/// Matching is greedy one-to-one over all (ground truth, prediction) pairs
/// of the category in descending IoU (ties by ground-truth then prediction
/// input order); unmatched ground truths contribute 0. Errors if any
/// prediction/ground-truth mask pair disagrees on the raster grid.
pub fn instance_seg_iou(
    preds: &[CategorizedMask],
    gts: &[CategorizedMask],
    category: Category,
) -> Result<Option<f64>> {
    let scores = matched_ious(preds, gts, category)?;
    if scores.is_empty() {
        return Ok(None);
    }
    let n = scores.len() as f64;
    Ok(Some(scores.iter().sum::<f64>() / n))
}

/// Greedily matched IoU per ground truth of the category, in ground-truth
/// input order (0.0 for unmatched); empty when the category has no ground
/// truths. This is the per-image kernel `instance_seg_iou` averages; the
/// dataset-level report averages it across images instead.
pub fn matched_ious(
    preds: &[CategorizedMask],
    gts: &[CategorizedMask],
    category: Category,
) -> Result<Vec<f64>> {
    let gt_idx: Vec<usize> = (0..gts.len())
        .filter(|&i| gts[i].category == category)
        .collect();
    if gt_idx.is_empty() {
        return Ok(Vec::new());
    }
    let pred_idx: Vec<usize> = (0..preds.len())
        .filter(|&i| preds[i].category == category)
        .collect();

    // All pair IoUs, then a single total-order sweep: taking pairs in
    // (IoU desc, gt, pred) order while skipping already-assigned rows or
    // columns is exactly the iterated argmax greedy matching.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(gt_idx.len() * pred_idx.len());
    for (a, &gi) in gt_idx.iter().enumerate() {
        for (b, &pi) in pred_idx.iter().enumerate() {
            let iou = f64::from(mask_iou(&gts[gi].mask, &preds[pi].mask)?);
            pairs.push((iou, a, b));
        }
    }
    pairs.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .expect("finite IoU")
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let mut gt_score = vec![0.0f64; gt_idx.len()];
    let mut gt_taken = vec![false; gt_idx.len()];
    let mut pred_taken = vec![false; pred_idx.len()];
    for (iou, a, b) in pairs {
        if gt_taken[a] || pred_taken[b] {
            continue;
        }
        gt_taken[a] = true;
        pred_taken[b] = true;
        gt_score[a] = iou;
    }
    Ok(gt_score)
}
