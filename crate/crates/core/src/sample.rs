//! Instances and samples: the unit records flowing through generation,
//! training, and evaluation.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BBox, Mask};
use crate::keypoint::{Keypoint, NUM_KEYPOINTS};

/// Fraction of the box diagonal by which the box is expanded when
/// checking that labeled keypoints fall inside it.
pub const KEYPOINT_MARGIN_FRACTION: f32 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Person,
    Rider,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Person, Category::Rider];

    pub fn index(self) -> usize {
        match self {
            Category::Person => 0,
            Category::Rider => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Category> {
        match i {
            0 => Some(Category::Person),
            1 => Some(Category::Rider),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Person => "person",
            Category::Rider => "rider",
        }
    }
}

/// Which annotation distribution a sample belongs to. Source samples carry
/// pose annotations; target samples never do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// One pedestrian in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Full-body extent, including occluded parts.
    pub bbox: BBox,
    /// Visible pixels on the image grid.
    pub mask: Mask,
    /// Exactly 13 keypoints when the sample's domain provides pose labels.
    pub keypoints: Option<[Keypoint; NUM_KEYPOINTS]>,
    pub category: Category,
    /// Unoccluded fraction of the full-body extent, in [0, 1].
    pub visibility_ratio: f32,
}

impl Instance {
    pub fn validate(&self, image_h: usize, image_w: usize) -> Result<()> {
        self.bbox.validate()?;
        if self.mask.dim() != (image_h, image_w) {
            return Err(Error::ShapeMismatch {
                context: "instance mask vs image grid",
                expected: vec![image_h, image_w],
                got: vec![self.mask.dim().0, self.mask.dim().1],
            });
        }
        if !(0.0..=1.0).contains(&self.visibility_ratio) {
            return Err(Error::invalid_arg(format!(
                "visibility_ratio {} outside [0, 1]",
                self.visibility_ratio
            )));
        }
        let mut any_in_box = false;
        for ((r, c), &v) in self.mask.indexed_iter() {
            if v && self.bbox.contains(c as f32 + 0.5, r as f32 + 0.5) {
                any_in_box = true;
                break;
            }
        }
        if !any_in_box {
            return Err(Error::invalid_arg("instance mask has no set pixel inside its box"));
        }
        if let Some(kps) = &self.keypoints {
            let margin = KEYPOINT_MARGIN_FRACTION * self.bbox.diagonal();
            let expanded = self.bbox.expanded(margin);
            for (i, kp) in kps.iter().enumerate() {
                if kp.visibility.is_labeled() && !expanded.contains(kp.x + 0.5, kp.y + 0.5) {
                    return Err(Error::invalid_arg(format!(
                        "labeled keypoint {i} at ({}, {}) outside expanded box",
                        kp.x, kp.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One image with its instances and domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// H x W x 3, values in [0, 1].
    pub image: Array3<f32>,
    pub instances: Vec<Instance>,
    pub domain: Domain,
    pub sample_id: String,
    pub rng_seed: u64,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }

    /// Check every structural invariant, including the domain/keypoints coupling.
    pub fn validate(&self) -> Result<()> {
        let (h, w, ch) = self.image.dim();
        if ch != 3 {
            return Err(Error::ShapeMismatch {
                context: "sample image channels",
                expected: vec![h, w, 3],
                got: vec![h, w, ch],
            });
        }
        if self.image.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid_arg("image values outside [0, 1]"));
        }
        for (i, inst) in self.instances.iter().enumerate() {
            inst.validate(h, w).map_err(|e| {
                Error::invalid_arg(format!("instance {i} of sample {}: {e}", self.sample_id))
            })?;
            match self.domain {
                Domain::Source if inst.keypoints.is_none() => {
                    return Err(Error::invalid_arg(format!(
                        "source-domain sample {} instance {i} missing keypoints",
                        self.sample_id
                    )));
                }
                Domain::Target if inst.keypoints.is_some() => {
                    return Err(Error::invalid_arg(format!(
                        "target-domain sample {} instance {i} carries keypoints",
                        self.sample_id
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoint::Visibility;
    use ndarray::Array2;

    fn tiny_instance(with_kps: bool) -> Instance {
        let mut mask = Array2::from_elem((8, 8), false);
        for r in 2..6 {
            for c in 3..5 {
                mask[[r, c]] = true;
            }
        }
        let keypoints = with_kps.then(|| {
            let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
            kps[0] = Keypoint {
                x: 3.5,
                y: 2.5,
                visibility: Visibility::LabeledVisible,
            };
            kps
        });
        Instance {
            bbox: BBox::new(3.0, 2.0, 5.0, 6.0).unwrap(),
            mask,
            keypoints,
            category: Category::Person,
            visibility_ratio: 1.0,
        }
    }

    fn tiny_sample(domain: Domain, with_kps: bool) -> Sample {
        Sample {
            image: Array3::zeros((8, 8, 3)),
            instances: vec![tiny_instance(with_kps)],
            domain,
            sample_id: "t0".into(),
            rng_seed: 0,
        }
    }

    #[test]
    fn domain_keypoint_coupling_enforced() {
        assert!(tiny_sample(Domain::Source, true).validate().is_ok());
        assert!(tiny_sample(Domain::Target, false).validate().is_ok());
        assert!(tiny_sample(Domain::Source, false).validate().is_err());
        assert!(tiny_sample(Domain::Target, true).validate().is_err());
    }

    #[test]
    fn keypoint_outside_expanded_box_rejected() {
        let mut s = tiny_sample(Domain::Source, true);
        s.instances[0].keypoints.as_mut().unwrap()[0].x = 100.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn empty_mask_in_box_rejected() {
        let mut s = tiny_sample(Domain::Target, false);
        s.instances[0].mask.fill(false);
        s.instances[0].mask[[7, 7]] = true; // outside the box
        assert!(s.validate().is_err());
    }
}
