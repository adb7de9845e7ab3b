//! The 13-keypoint skeleton and per-keypoint annotations.
//!
//! The keypoint set is COCO's 17 minus the four facial points
//! (eyes, ears): nose, shoulders, elbows, wrists, hips, knees, ankles.

use serde::{Deserialize, Serialize};

pub const NUM_KEYPOINTS: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    /// No annotation for this joint; excluded from supervision and scoring.
    NotLabeled,
    /// Annotated but occluded in the image.
    LabeledInvisible,
    /// Annotated and visible.
    LabeledVisible,
}

impl Visibility {
    pub fn is_labeled(self) -> bool {
        !matches!(self, Visibility::NotLabeled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Pixel-center-index coordinates (see `geom` for conventions).
    pub x: f32,
    pub y: f32,
    pub visibility: Visibility,
}

impl Keypoint {
    pub fn not_labeled() -> Self {
        Keypoint {
            x: 0.0,
            y: 0.0,
            visibility: Visibility::NotLabeled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum KeypointKind {
    Nose = 0,
    LeftShoulder = 1,
    RightShoulder = 2,
    LeftElbow = 3,
    RightElbow = 4,
    LeftWrist = 5,
    RightWrist = 6,
    LeftHip = 7,
    RightHip = 8,
    LeftKnee = 9,
    RightKnee = 10,
    LeftAnkle = 11,
    RightAnkle = 12,
}

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Left/right index pairs exchanged under horizontal flip.
pub const FLIP_PAIRS: [(usize, usize); 6] = [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12)];

/// Skeleton edges (index pairs) used for rendering overlays.
pub const SKELETON_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (0, 2),
    (1, 2),
    (1, 3),
    (3, 5),
    (2, 4),
    (4, 6),
    (7, 8),
    (7, 9),
    (9, 11),
    (8, 10),
    (10, 12),
];

/// Swap left/right identities in-place (used by horizontal flip).
pub fn swap_left_right(kps: &mut [Keypoint; NUM_KEYPOINTS]) {
    for &(l, r) in &FLIP_PAIRS {
        kps.swap(l, r);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_pairs_cover_all_lateral_joints() {
        let mut seen = [false; NUM_KEYPOINTS];
        seen[KeypointKind::Nose as usize] = true;
        for &(l, r) in &FLIP_PAIRS {
            assert!(KEYPOINT_NAMES[l].starts_with("left_"));
            assert!(KEYPOINT_NAMES[r].starts_with("right_"));
            assert_eq!(&KEYPOINT_NAMES[l][5..], &KEYPOINT_NAMES[r][6..]);
            seen[l] = true;
            seen[r] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn swap_is_an_involution() {
        let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
        for (i, kp) in kps.iter_mut().enumerate() {
            kp.x = i as f32;
        }
        let original = kps;
        swap_left_right(&mut kps);
        assert_ne!(kps[1].x, original[1].x);
        swap_left_right(&mut kps);
        assert_eq!(kps, original);
    }
}
