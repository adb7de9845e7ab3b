//! Core library for desk-scale occluded pedestrian pose estimation.
//!
//! The pipeline has two halves. Two distribution-specific multi-task
//! networks (detection + instance segmentation) extract pedestrian
//! features from a pose-annotated source distribution and a pose-free
//! target distribution. An instance-level pose branch is then trained
//! with adversarial domain adaptation so that keypoint supervision from
//! the source transfers to the target.
//!
//! Everything runs on CPU over synthetic stick-figure scenes; generation,
//! training, and evaluation are deterministic given their seeds.

pub mod error;
pub mod geom;
pub mod heatmap;
pub mod infer;
pub mod keypoint;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod train;
pub mod rng;
pub mod sample;
pub mod scalar;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use geom::BBox;
pub use keypoint::{Keypoint, Visibility, NUM_KEYPOINTS};
pub use sample::{Category, Domain, Instance, Sample};
