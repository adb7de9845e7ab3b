//! Subcommand implementations. Each takes a plain argument struct so tests
//! can call them in-process; `main.rs` only parses flags and forwards here.

mod eval;
mod gen_data;
mod plot_cmd;
mod train;

pub use eval::{cmd_eval, AblationRow, EvalArgs, EvalOutcome};
pub use gen_data::{cmd_gen_data, GenDataArgs, GenDataOutcome};
pub use plot_cmd::{cmd_plot, PlotArgs, PlotOutcome};
pub use train::{cmd_train, TrainArgs, TrainOutcome};

use std::path::{Path, PathBuf};

use pedpose_core::sample::Domain;
use pedpose_core::synthdata::{build_dataset, load_dataset, Dataset};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Dataset split directory names under the data root, in generation order.
pub const SPLITS: [&str; 4] = [
    "source-train",
    "source-eval",
    "target-train",
    "target-eval",
];

/// Load one split, mapping absence to the missing-input exit code.
pub fn load_split(data_root: &Path, split: &str) -> Result<Dataset> {
    let dir = data_root.join(split);
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::MissingInput(
            format!("dataset split {split:?} (run `pedpose gen-data` first)"),
            dir,
        ));
    }
    Ok(load_dataset(&dir)?)
}

/// Regenerate a target-domain dataset as its pose-annotated twin: identical
/// params and seed except for the domain tag, which only controls whether
/// keypoint labels are attached — geometry and pixels are unchanged.
pub fn annotated_twin(ds: &Dataset) -> Result<Dataset> {
    let params = ds.manifest.params.clone().with_domain(Domain::Source);
    Ok(build_dataset(
        &params,
        ds.samples.len(),
        ds.manifest.base_seed,
    )?)
}

/// Resolve the run config from an optional file plus CLI overrides.
pub fn resolve_config(config_path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match config_path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Resolve the output root from `--out`, then `$PEDPOSE_OUT`, then the
/// built-in default.
pub fn resolve_out_root(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(crate::default_out_root)
}
