//! Dataset persistence: PNG images, JSONL annotations, JSON manifest.
//!
//! Layout under a dataset root:
//! ```text
//! manifest.json        reproduction record (params, seeds, ids, hash)
//! annotations.jsonl    one record per sample, in manifest order
//! images/<id>.png      8-bit RGB
//! ```
//! Images are quantized to the 8-bit grid at generation time, so the
//! save/load round trip is bit-exact on pixel values.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BBox, Mask};
use crate::keypoint::{Keypoint, Visibility, NUM_KEYPOINTS};
use crate::rng::hex_digest;
use crate::sample::{Category, Domain, Instance, Sample};

use super::{Dataset, DatasetManifest, DATASET_SCHEMA_VERSION};

/// Row-major run-length encoding; `counts` alternates off/on runs and
/// always starts with the (possibly zero) leading off-run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub h: usize,
    pub w: usize,
    pub counts: Vec<usize>,
}

pub fn rle_encode(mask: &Mask) -> RleMask {
    let (h, w) = mask.dim();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0usize;
    for &v in mask.iter() {
        if v == current {
            run += 1;
        } else {
            counts.push(run);
            current = v;
            run = 1;
        }
    }
    counts.push(run);
    if counts.is_empty() {
        counts.push(h * w);
    }
    RleMask { h, w, counts }
}

pub fn rle_decode(rle: &RleMask) -> Result<Mask> {
    let total: usize = rle.counts.iter().sum();
    if total != rle.h * rle.w {
        return Err(Error::Dataset(format!(
            "run-length total {total} does not cover {}x{} grid",
            rle.h, rle.w
        )));
    }
    let mut flat = Vec::with_capacity(total);
    let mut value = false;
    for &run in &rle.counts {
        flat.extend(std::iter::repeat_n(value, run));
        value = !value;
    }
    Mask::from_shape_vec((rle.h, rle.w), flat)
        .map_err(|e| Error::Dataset(format!("run-length shape: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    /// [x0, y0, x1, y1] in corner coordinates.
    pub bbox: [f32; 4],
    pub category: Category,
    pub visibility_ratio: f32,
    pub mask: RleMask,
    /// Thirteen [x, y, v] triples with v in {0: not labeled,
    /// 1: labeled-invisible, 2: labeled-visible}; absent for pose-free samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<[f32; 3]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub domain: Domain,
    pub rng_seed: u64,
    /// Path of the image file relative to the dataset root.
    pub image: String,
    pub instances: Vec<InstanceRecord>,
}

fn visibility_code(v: Visibility) -> f32 {
    match v {
        Visibility::NotLabeled => 0.0,
        Visibility::LabeledInvisible => 1.0,
        Visibility::LabeledVisible => 2.0,
    }
}

fn visibility_from_code(c: f32) -> Result<Visibility> {
    match c as i64 {
        0 => Ok(Visibility::NotLabeled),
        1 => Ok(Visibility::LabeledInvisible),
        2 => Ok(Visibility::LabeledVisible),
        other => Err(Error::Dataset(format!("visibility code {other} out of range"))),
    }
}

fn instance_to_record(inst: &Instance) -> InstanceRecord {
    InstanceRecord {
        bbox: [inst.bbox.x0, inst.bbox.y0, inst.bbox.x1, inst.bbox.y1],
        category: inst.category,
        visibility_ratio: inst.visibility_ratio,
        mask: rle_encode(&inst.mask),
        keypoints: inst.keypoints.as_ref().map(|kps| {
            kps.iter()
                .map(|k| [k.x, k.y, visibility_code(k.visibility)])
                .collect()
        }),
    }
}

fn instance_from_record(rec: &InstanceRecord) -> Result<Instance> {
    let keypoints = match &rec.keypoints {
        None => None,
        Some(triples) => {
            if triples.len() != NUM_KEYPOINTS {
                return Err(Error::Dataset(format!(
                    "expected {NUM_KEYPOINTS} keypoints, found {}",
                    triples.len()
                )));
            }
            let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
            for (kp, t) in kps.iter_mut().zip(triples.iter()) {
                *kp = Keypoint {
                    x: t[0],
                    y: t[1],
                    visibility: visibility_from_code(t[2])?,
                };
            }
            Some(kps)
        }
    };
    Ok(Instance {
        bbox: BBox::new(rec.bbox[0], rec.bbox[1], rec.bbox[2], rec.bbox[3])?,
        mask: rle_decode(&rec.mask)?,
        keypoints,
        category: rec.category,
        visibility_ratio: rec.visibility_ratio,
    })
}

fn image_to_png(image: &Array3<f32>) -> image::RgbImage {
    let (h, w, _) = image.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            (image[[y as usize, x as usize, ch]].clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

fn image_from_png(img: &image::RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(r, c, ch)| {
        img.get_pixel(c as u32, r as u32).0[ch] as f32 / 255.0
    })
}

/// Content digest of one sample (image bits, annotations, identity).
pub fn sample_digest(s: &Sample) -> String {
    let mut bytes: Vec<u8> = Vec::new();
    bytes.extend_from_slice(s.sample_id.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(s.domain.name().as_bytes());
    bytes.extend_from_slice(&s.rng_seed.to_le_bytes());
    for v in s.image.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for inst in &s.instances {
        for b in [inst.bbox.x0, inst.bbox.y0, inst.bbox.x1, inst.bbox.y1] {
            bytes.extend_from_slice(&b.to_le_bytes());
        }
        bytes.push(inst.category.index() as u8);
        bytes.extend_from_slice(&inst.visibility_ratio.to_le_bytes());
        for &m in inst.mask.iter() {
            bytes.push(m as u8);
        }
        match &inst.keypoints {
            None => bytes.push(0),
            Some(kps) => {
                bytes.push(1);
                for k in kps.iter() {
                    bytes.extend_from_slice(&k.x.to_le_bytes());
                    bytes.extend_from_slice(&k.y.to_le_bytes());
                    bytes.push(visibility_code(k.visibility) as u8);
                }
            }
        }
    }
    hex_digest(&bytes)
}

/// Digest of a whole dataset: manifest hash plus every sample digest.
pub fn dataset_digest(ds: &Dataset) -> Result<String> {
    let mut bytes = serde_json::to_vec(&ds.manifest)?;
    for s in &ds.samples {
        bytes.extend_from_slice(sample_digest(s).as_bytes());
    }
    Ok(hex_digest(&bytes))
}

/// Write a dataset under `root` (created if missing).
pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let images_dir = root.join("images");
    fs::create_dir_all(&images_dir)?;
    fs::write(
        root.join("manifest.json"),
        serde_json::to_string_pretty(&ds.manifest)?,
    )?;

    let mut jsonl = String::new();
    for s in &ds.samples {
        let image_rel = format!("images/{}.png", s.sample_id);
        image_to_png(&s.image).save(root.join(&image_rel))?;
        let record = SampleRecord {
            sample_id: s.sample_id.clone(),
            domain: s.domain,
            rng_seed: s.rng_seed,
            image: image_rel,
            instances: s.instances.iter().map(instance_to_record).collect(),
        };
        jsonl.push_str(&serde_json::to_string(&record)?);
        jsonl.push('\n');
    }
    fs::write(root.join("annotations.jsonl"), jsonl)?;
    Ok(())
}

/// Load a dataset saved by [`save_dataset`], validating every sample.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Error::Dataset(format!(
            "no manifest.json under {}",
            root.display()
        )));
    }
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Dataset(format!(
            "dataset schema version {} (this build reads {})",
            manifest.schema_version, DATASET_SCHEMA_VERSION
        )));
    }

    let jsonl = fs::read_to_string(root.join("annotations.jsonl"))?;
    let mut samples = Vec::new();
    for (line_no, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(line)?;
        let expected_id = manifest.sample_ids.get(line_no);
        if expected_id != Some(&rec.sample_id) {
            return Err(Error::Dataset(format!(
                "annotation line {} has id {:?}, manifest says {:?}",
                line_no + 1,
                rec.sample_id,
                expected_id
            )));
        }
        let img = image::open(root.join(&rec.image))?.to_rgb8();
        let sample = Sample {
            image: image_from_png(&img),
            instances: rec
                .instances
                .iter()
                .map(instance_from_record)
                .collect::<Result<Vec<_>>>()?,
            domain: rec.domain,
            sample_id: rec.sample_id,
            rng_seed: rec.rng_seed,
        };
        sample.validate()?;
        samples.push(sample);
    }
    if samples.len() != manifest.sample_ids.len() {
        return Err(Error::Dataset(format!(
            "manifest lists {} samples, annotations contain {}",
            manifest.sample_ids.len(),
            samples.len()
        )));
    }
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{build_dataset, DistributionParams};
    use ndarray::Array2;

    #[test]
    fn rle_round_trips_arbitrary_masks() {
        let cases = [
            Array2::from_elem((4, 5), false),
            Array2::from_elem((4, 5), true),
            Array2::from_shape_fn((7, 3), |(r, c)| (r * 3 + c) % 2 == 0),
            Array2::from_shape_fn((1, 9), |(_, c)| c >= 4),
        ];
        for mask in cases {
            let rle = rle_encode(&mask);
            assert_eq!(rle_decode(&rle).unwrap(), mask);
            // Leading run is the off-run even when the mask starts on.
            if mask[[0, 0]] {
                assert_eq!(rle.counts[0], 0);
            }
        }
    }

    #[test]
    fn rle_decode_rejects_wrong_total() {
        let bad = RleMask { h: 2, w: 2, counts: vec![1, 2] };
        assert!(rle_decode(&bad).is_err());
    }

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for params in [
            DistributionParams::source_preset(),
            DistributionParams::target_preset(),
        ] {
            let ds = build_dataset(&params, 4, 17).unwrap();
            let sub = dir.path().join(params.domain.name());
            save_dataset(&ds, &sub).unwrap();
            let back = load_dataset(&sub).unwrap();
            assert_eq!(back.manifest, ds.manifest);
            assert_eq!(back.samples.len(), ds.samples.len());
            for (a, b) in ds.samples.iter().zip(back.samples.iter()) {
                assert_eq!(sample_digest(a), sample_digest(b), "sample {}", a.sample_id);
                assert_eq!(a, b);
            }
            assert_eq!(dataset_digest(&ds).unwrap(), dataset_digest(&back).unwrap());
        }
    }

    #[test]
    fn load_missing_manifest_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn load_detects_id_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&DistributionParams::source_preset(), 2, 3).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        // Swap the two annotation lines so ids disagree with the manifest.
        let ann_path = dir.path().join("annotations.jsonl");
        let text = fs::read_to_string(&ann_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        fs::write(&ann_path, format!("{}\n{}\n", lines[1], lines[0])).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
