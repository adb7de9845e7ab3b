//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8  b"PEDPOSE\x01"
//! version  u32
//! step     u64
//! cfg_len  u32, followed by the ModelConfig as JSON
//! section "params":    entry count u32, then per tensor:
//!   name_len u16 + UTF-8 name, ndim u8, dims u32 each, f32 LE payload
//! section "velocity":  same encoding (momentum buffers; resuming training
//!   mid-run needs them to reproduce the uninterrupted trajectory)
//! ```
//!
//! Round-trips are bit-exact: parameters are stored and reloaded as their
//! raw f32 bit patterns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;

use crate::error::{Error, Result};

use super::{ModelConfig, ParamStore};

const MAGIC: &[u8; 8] = b"PEDPOSE\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A full training state snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: ParamStore,
    pub velocity: ParamStore,
}

fn write_store(w: &mut impl Write, store: &ParamStore) -> Result<()> {
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, value) in store.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[value.ndim() as u8])?;
        for d in value.shape() {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in value.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_buf(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let b = read_exact_buf(r, 2)?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let b = read_exact_buf(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let b = read_exact_buf(r, 8)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

fn read_store(r: &mut impl Read) -> Result<ParamStore> {
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u16(r)? as usize;
        let name = String::from_utf8(read_exact_buf(r, name_len)?)
            .map_err(|e| Error::Checkpoint(format!("parameter name not UTF-8: {e}")))?;
        let ndim = read_exact_buf(r, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = read_exact_buf(r, n * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = ArrayD::from_shape_vec(shape, data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        store.insert(name, tensor);
    }
    Ok(store)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&ckpt.step.to_le_bytes())?;
    let cfg_json = serde_json::to_vec(&ckpt.config)?;
    w.write_all(&(cfg_json.len() as u32).to_le_bytes())?;
    w.write_all(&cfg_json)?;
    write_store(&mut w, &ckpt.params)?;
    write_store(&mut w, &ckpt.velocity)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::Checkpoint(format!("no checkpoint at {}", path.display())));
    }
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact_buf(&mut r, 8)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let step = read_u64(&mut r)?;
    let cfg_len = read_u32(&mut r)? as usize;
    let config: ModelConfig = serde_json::from_slice(&read_exact_buf(&mut r, cfg_len)?)?;
    let params = read_store(&mut r)?;
    let velocity = read_store(&mut r)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after checkpoint payload",
            rest.len()
        )));
    }
    Ok(Checkpoint { config, step, params, velocity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init_components;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = ModelConfig::default();
        let params = init_components(&cfg, 77).unwrap();
        let mut velocity = params.zeros_like();
        velocity.get_mut("enc_c/stem.w")[[0, 0, 0, 0]] = -0.123456;
        let ckpt = Checkpoint { config: cfg, step: 4242, params, velocity };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt").join("model.bin");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.step, 4242);
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.params.digest(), ckpt.params.digest());
        assert_eq!(back.velocity.digest(), ckpt.velocity.digest());
        assert_eq!(back, ckpt);
    }

    #[test]
    fn checkpoint_rejects_garbage_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.bin");
        assert!(matches!(load_checkpoint(&missing), Err(Error::Checkpoint(_))));
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, b"not a checkpoint at all").unwrap();
        assert!(matches!(load_checkpoint(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn checkpoint_rejects_future_versions() {
        let cfg = ModelConfig::default();
        let params = init_components(&cfg, 0).unwrap();
        let velocity = params.zeros_like();
        let ckpt = Checkpoint { config: cfg, step: 0, params, velocity };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        save_checkpoint(&ckpt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // bump the version field
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version 99"));
    }
}
