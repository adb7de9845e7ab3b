//! Keypoint heatmaps: Gaussian rendering and argmax decoding.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::keypoint::{Keypoint, Visibility, NUM_KEYPOINTS};

/// Per-keypoint heatmaps on a grid `stride` times coarser than the frame
/// the keypoints live in. Channel values are in [0, 1]; an unlabeled
/// keypoint has an all-zero channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmaps {
    /// 13 x h x w.
    pub maps: Array3<f32>,
    pub stride: usize,
}

impl Heatmaps {
    pub fn shape(&self) -> (usize, usize) {
        (self.maps.dim().1, self.maps.dim().2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.maps.dim().0 != NUM_KEYPOINTS {
            return Err(Error::ShapeMismatch {
                context: "heatmap channels",
                expected: vec![NUM_KEYPOINTS],
                got: vec![self.maps.dim().0],
            });
        }
        if self.maps.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid_arg("heatmap values outside [0, 1]"));
        }
        Ok(())
    }
}

/// Render unnormalized Gaussians (peak value 1) centered at each labeled
/// keypoint. Grid node `(r, c)` sits at `(c * stride, r * stride)` in the
/// keypoint frame; a keypoint exactly on a node renders 1.0 there.
pub fn render_heatmaps(
    keypoints: &[Keypoint; NUM_KEYPOINTS],
    shape: (usize, usize),
    stride: usize,
    sigma: f32,
) -> Result<Heatmaps> {
    if sigma <= 0.0 {
        return Err(Error::invalid_arg(format!("sigma must be positive, got {sigma}")));
    }
    if stride == 0 {
        return Err(Error::invalid_arg("stride must be nonzero"));
    }
    let (h, w) = shape;
    let mut maps = Array3::<f32>::zeros((NUM_KEYPOINTS, h, w));
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (k, kp) in keypoints.iter().enumerate() {
        if kp.visibility == Visibility::NotLabeled {
            continue;
        }
        let cx = kp.x / stride as f32;
        let cy = kp.y / stride as f32;
        for r in 0..h {
            for c in 0..w {
                let dx = c as f32 - cx;
                let dy = r as f32 - cy;
                maps[[k, r, c]] = (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    Ok(Heatmaps { maps, stride })
}

/// Invert rendering: per channel, the argmax node mapped back to the
/// keypoint frame. Channels whose max falls below `threshold` decode as
/// not-labeled. Ties break toward the smallest (row, col) in row-major order.
pub fn decode_heatmaps(h: &Heatmaps, threshold: f32) -> Result<[Keypoint; NUM_KEYPOINTS]> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::invalid_arg(format!(
            "decode threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let (rows, cols) = h.shape();
    let mut out = [Keypoint::not_labeled(); NUM_KEYPOINTS];
    for k in 0..NUM_KEYPOINTS {
        let mut best = f32::NEG_INFINITY;
        let mut best_rc = (0usize, 0usize);
        for r in 0..rows {
            for c in 0..cols {
                let v = h.maps[[k, r, c]];
                if v > best {
                    best = v;
                    best_rc = (r, c);
                }
            }
        }
        if best >= threshold {
            out[k] = Keypoint {
                x: (best_rc.1 * h.stride) as f32,
                y: (best_rc.0 * h.stride) as f32,
                visibility: Visibility::LabeledVisible,
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn kps_with(entries: &[(usize, f32, f32)]) -> [Keypoint; NUM_KEYPOINTS] {
        let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
        for &(k, x, y) in entries {
            kps[k] = Keypoint {
                x,
                y,
                visibility: Visibility::LabeledVisible,
            };
        }
        kps
    }

    #[test]
    fn peak_is_one_at_exact_grid_node() {
        let kps = kps_with(&[(0, 8.0, 4.0)]);
        let hm = render_heatmaps(&kps, (8, 8), 2, 2.0).unwrap();
        assert_eq!(hm.maps[[0, 2, 4]], 1.0);
    }

    #[test]
    fn not_labeled_channel_is_zero() {
        let kps = kps_with(&[(0, 8.0, 4.0)]);
        let hm = render_heatmaps(&kps, (8, 8), 2, 2.0).unwrap();
        assert_eq!(hm.maps.index_axis(ndarray::Axis(0), 1).sum(), 0.0);
    }

    #[test]
    fn gaussian_value_at_known_distance() {
        // Node at Euclidean distance 2 from the center, sigma 2:
        // exp(-4 / 8) = exp(-0.5).
        let kps = kps_with(&[(3, 4.0, 4.0)]);
        let hm = render_heatmaps(&kps, (8, 8), 1, 2.0).unwrap();
        assert_relative_eq!(hm.maps[[3, 4, 6]], (-0.5f32).exp(), max_relative = 1e-6);
        assert_relative_eq!(hm.maps[[3, 6, 4]], (-0.5f32).exp(), max_relative = 1e-6);
    }

    #[test]
    fn all_zero_channel_decodes_not_labeled() {
        let hm = Heatmaps {
            maps: Array3::zeros((NUM_KEYPOINTS, 4, 4)),
            stride: 2,
        };
        let kps = decode_heatmaps(&hm, 0.1).unwrap();
        assert!(kps.iter().all(|k| k.visibility == Visibility::NotLabeled));
    }

    #[test]
    fn argmax_prefers_higher_peak() {
        let mut maps = Array3::zeros((NUM_KEYPOINTS, 5, 5));
        maps[[2, 4, 4]] = 0.8;
        maps[[2, 1, 2]] = 0.9;
        let hm = Heatmaps { maps, stride: 2 };
        let kps = decode_heatmaps(&hm, 0.5).unwrap();
        assert_eq!((kps[2].x, kps[2].y), (4.0, 2.0));
    }

    #[test]
    fn tie_breaks_to_smallest_row_major_position() {
        let mut maps = Array3::zeros((NUM_KEYPOINTS, 5, 5));
        maps[[0, 3, 1]] = 0.7;
        maps[[0, 1, 3]] = 0.7;
        let hm = Heatmaps { maps, stride: 1 };
        let kps = decode_heatmaps(&hm, 0.5).unwrap();
        assert_eq!((kps[0].x, kps[0].y), (3.0, 1.0));
    }

    #[test]
    fn decode_render_round_trip_within_half_stride() {
        let stride = 2usize;
        let kps = kps_with(&[(0, 5.3, 9.1), (5, 21.0, 3.7), (12, 30.9, 28.2)]);
        let hm = render_heatmaps(&kps, (16, 16), stride, 2.0).unwrap();
        let decoded = decode_heatmaps(&hm, 0.2).unwrap();
        for k in [0usize, 5, 12] {
            assert_eq!(decoded[k].visibility, Visibility::LabeledVisible);
            assert!((decoded[k].x - kps[k].x).abs() <= stride as f32 / 2.0);
            assert!((decoded[k].y - kps[k].y).abs() <= stride as f32 / 2.0);
        }
    }

    proptest! {
        #[test]
        fn rendered_maps_respect_invariants(
            xs in proptest::collection::vec(0.0f32..30.0, NUM_KEYPOINTS),
            ys in proptest::collection::vec(0.0f32..30.0, NUM_KEYPOINTS),
            labeled in proptest::collection::vec(0u8..3, NUM_KEYPOINTS),
        ) {
            let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
            for k in 0..NUM_KEYPOINTS {
                kps[k] = Keypoint {
                    x: xs[k],
                    y: ys[k],
                    visibility: match labeled[k] {
                        0 => Visibility::NotLabeled,
                        1 => Visibility::LabeledInvisible,
                        _ => Visibility::LabeledVisible,
                    },
                };
            }
            let hm = render_heatmaps(&kps, (16, 16), 2, 1.5).unwrap();
            hm.validate().unwrap();
            for k in 0..NUM_KEYPOINTS {
                let ch = hm.maps.index_axis(ndarray::Axis(0), k);
                if kps[k].visibility == Visibility::NotLabeled {
                    prop_assert_eq!(ch.sum(), 0.0);
                } else {
                    prop_assert!(ch.iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }
    }
}
