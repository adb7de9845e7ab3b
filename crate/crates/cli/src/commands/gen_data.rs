//! `pedpose gen-data`: synthesize the four dataset splits.

use std::path::{Path, PathBuf};

use pedpose_core::rng::derive_seed;
use pedpose_core::sample::Domain;
use pedpose_core::synthdata::{build_dataset, save_dataset, DistributionParams};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

use super::SPLITS;

#[derive(Debug, Clone)]
pub struct GenDataArgs {
    pub config: RunConfig,
    /// Directory that will hold the four split subdirectories.
    pub data_root: PathBuf,
    /// Overwrite existing non-empty split directories.
    pub force: bool,
}

/// What was written, for logging and tests.
#[derive(Debug)]
pub struct GenDataOutcome {
    pub data_root: PathBuf,
    /// (split name, sample count, params hash) per split, in [`SPLITS`] order.
    pub splits: Vec<(String, usize, String)>,
}

/// Distribution parameters for one split: the domain preset with the
/// configured image size. Training and eval splits share a layout so that
/// detection metrics see the same instance statistics the model trained on.
fn split_params(cfg: &RunConfig, domain: Domain) -> DistributionParams {
    let mut p = match domain {
        Domain::Source => DistributionParams::source_preset(),
        Domain::Target => DistributionParams::target_preset(),
    };
    p.image_size = (cfg.data.image_size, cfg.data.image_size);
    p
}

fn dir_is_nonempty(dir: &Path) -> bool {
    std::fs::read_dir(dir)
        .map(|mut it| it.next().is_some())
        .unwrap_or(false)
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<GenDataOutcome> {
    let cfg = &args.config;
    if cfg.data.n_train == 0 || cfg.data.n_eval == 0 {
        return Err(CliError::Usage(format!(
            "split sizes must be positive (n_train = {}, n_eval = {})",
            cfg.data.n_train, cfg.data.n_eval
        )));
    }

    if !args.force {
        for split in SPLITS {
            let dir = args.data_root.join(split);
            if dir_is_nonempty(&dir) {
                return Err(CliError::Inconsistent(format!(
                    "{} already contains data; pass --force to regenerate",
                    dir.display()
                )));
            }
        }
    }

    let mut outcome = GenDataOutcome {
        data_root: args.data_root.clone(),
        splits: Vec::with_capacity(SPLITS.len()),
    };
    for (idx, split) in SPLITS.iter().enumerate() {
        let domain = if split.starts_with("source") {
            Domain::Source
        } else {
            Domain::Target
        };
        let n = if split.ends_with("train") {
            cfg.data.n_train
        } else {
            cfg.data.n_eval
        };
        let params = split_params(cfg, domain);
        // One independent seed stream per split, all derived from the master
        // seed, so regenerating any single split is reproducible in isolation.
        let split_seed = derive_seed(cfg.seed, idx as u64);
        let ds = build_dataset(&params, n, split_seed)?;
        let dir = args.data_root.join(split);
        if args.force && dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        save_dataset(&ds, &dir)?;
        outcome
            .splits
            .push(((*split).to_owned(), n, ds.manifest.params_hash.clone()));
    }
    Ok(outcome)
}
