//! Run configuration: a flat, commented `key = value` file format.
//!
//! The format is a plain text file:
//!
//! ```text
//! # comment lines start with '#'; blank lines are ignored
//! seed = 7
//! data.n_train = 200
//! model.backbone = small
//! train.beta = 1.0
//! include base.cfg        # splice another file, relative to this one
//! ```
//!
//! Keys are dotted paths into [`RunConfig`]. Later assignments win, so an
//! `include` acts as a set of defaults that following lines may override.
//! Unknown keys and malformed lines are usage errors: a typo must never
//! silently fall back to a default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pedpose_core::nets::{BackboneSize, ModelConfig};
use pedpose_core::train::TrainConfig;

use crate::error::{CliError, Result};

/// Dataset-shape settings used by `gen-data` (and echoed into run manifests).
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Samples per training split (one split per distribution).
    pub n_train: usize,
    /// Samples per evaluation split.
    pub n_eval: usize,
    /// Side length of the square images to synthesize.
    pub image_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 200,
            n_eval: 50,
            image_size: 64,
        }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Seeds for the synthetic-occlusion sweep (one sweep pass per seed).
    pub sweep_seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sweep_seeds: vec![0, 1, 2],
        }
    }
}

/// Everything a run needs, resolvable from defaults, a config file, and
/// command-line overrides (in that order of precedence).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    /// Master seed; dataset split seeds and the training seed derive from it.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parse a config file, starting from defaults. See module docs for the
    /// format. Include cycles and unknown keys are usage errors.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut stack: Vec<PathBuf> = Vec::new();
        apply_file(&mut cfg, path, &mut stack)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse config text with no base directory; `include` is rejected.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            match classify_line(raw) {
                Line::Blank => {}
                Line::Include(_) => {
                    return Err(CliError::Usage(format!(
                        "line {}: include is only valid in a config file",
                        idx + 1
                    )));
                }
                Line::Pair(key, value) => set_key(&mut cfg, key, value)
                    .map_err(|msg| CliError::Usage(format!("line {}: {msg}", idx + 1)))?,
                Line::Bad(msg) => {
                    return Err(CliError::Usage(format!("line {}: {msg}", idx + 1)));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Render as config-file text. `RunConfig::from_text(cfg.to_text())`
    /// reproduces `cfg` exactly (floats use Rust's shortest round-trip form).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# pedpose run configuration");
        let _ = writeln!(s, "# master seed for data generation and training");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s);
        let _ = writeln!(s, "# synthetic dataset shape");
        let _ = writeln!(s, "data.n_train = {}", self.data.n_train);
        let _ = writeln!(s, "data.n_eval = {}", self.data.n_eval);
        let _ = writeln!(s, "data.image_size = {}", self.data.image_size);
        let _ = writeln!(s);
        let _ = writeln!(s, "# model (one of: small, medium, large)");
        let _ = writeln!(s, "model.backbone = {}", backbone_name(self.model.backbone_size));
        let _ = writeln!(s, "model.fpn_levels = {}", self.model.fpn_levels);
        let _ = writeln!(s, "model.fpn_channels = {}", self.model.fpn_channels);
        let _ = writeln!(s, "model.heatmap_stride = {}", self.model.heatmap_stride);
        let _ = writeln!(s, "model.roi_size = {}", self.model.roi_size);
        let _ = writeln!(s, "model.grl_lambda = {}", self.model.grl_lambda);
        let _ = writeln!(s);
        let _ = writeln!(s, "# optimization");
        let _ = writeln!(s, "train.stage1_steps = {}", self.train.stage1_steps);
        let _ = writeln!(s, "train.stage2_steps = {}", self.train.stage2_steps);
        let _ = writeln!(s, "train.checkpoint_every = {}", self.train.checkpoint_every);
        let _ = writeln!(s, "train.lr0 = {}", self.train.lr0);
        let _ = writeln!(s, "train.momentum = {}", self.train.momentum);
        let _ = writeln!(s, "train.decay_every = {}", self.train.decay_every);
        let _ = writeln!(s, "train.decay_factor = {}", self.train.decay_factor);
        let _ = writeln!(s, "# loss weights: alpha scales detection, beta the domain");
        let _ = writeln!(s, "# classifier, gamma the pose head");
        let _ = writeln!(s, "train.alpha = {}", self.train.weights.alpha);
        let _ = writeln!(s, "train.beta = {}", self.train.weights.beta);
        let _ = writeln!(s, "train.gamma = {}", self.train.weights.gamma);
        let _ = writeln!(s, "# feature-masking curriculum (linear ramp)");
        let _ = writeln!(s, "train.curriculum_start = {}", self.train.curriculum.p_start);
        let _ = writeln!(s, "train.curriculum_end = {}", self.train.curriculum.p_end);
        let _ = writeln!(s, "train.augment_flip = {}", self.train.augment.flip);
        let _ = writeln!(s, "train.augment_blur = {}", self.train.augment.blur);
        let _ = writeln!(s, "train.augment_brightness = {}", self.train.augment.brightness);
        let _ = writeln!(s);
        let _ = writeln!(s, "# evaluation");
        let _ = writeln!(s, "eval.sweep_seeds = {}", join_u64(&self.eval.sweep_seeds));
        s
    }

    /// Reject values the pipeline cannot run with. Structural constraints
    /// (stride vs. pyramid, positive dims) are delegated to the core types.
    pub fn validate(&self) -> Result<()> {
        if self.data.image_size < 16 {
            return Err(CliError::Usage(format!(
                "data.image_size must be at least 16, got {}",
                self.data.image_size
            )));
        }
        if self.eval.sweep_seeds.is_empty() {
            return Err(CliError::Usage(
                "eval.sweep_seeds must list at least one seed".into(),
            ));
        }
        self.model.validate().map_err(CliError::Core)?;
        self.train.validate().map_err(CliError::Core)?;
        Ok(())
    }

    /// The training config with the master seed folded in.
    pub fn train_for_run(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t
    }
}

fn backbone_name(b: BackboneSize) -> &'static str {
    match b {
        BackboneSize::Small => "small",
        BackboneSize::Medium => "medium",
        BackboneSize::Large => "large",
    }
}

fn join_u64(v: &[u64]) -> String {
    v.iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

enum Line<'a> {
    Blank,
    Include(&'a str),
    Pair(&'a str, &'a str),
    Bad(String),
}

fn classify_line(raw: &str) -> Line<'_> {
    let line = match raw.find('#') {
        Some(pos) => &raw[..pos],
        None => raw,
    };
    let line = line.trim();
    if line.is_empty() {
        return Line::Blank;
    }
    if let Some(rest) = line.strip_prefix("include") {
        if rest.starts_with(char::is_whitespace) {
            let target = rest.trim();
            if target.is_empty() {
                return Line::Bad("include needs a file path".into());
            }
            return Line::Include(target);
        }
    }
    match line.split_once('=') {
        Some((key, value)) => {
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                Line::Bad("missing key before '='".into())
            } else {
                Line::Pair(key, value)
            }
        }
        None => Line::Bad(format!("expected 'key = value', got {line:?}")),
    }
}

fn apply_file(cfg: &mut RunConfig, path: &Path, stack: &mut Vec<PathBuf>) -> Result<()> {
    let canon = std::fs::canonicalize(path)
        .map_err(|_| CliError::MissingInput("config file".into(), path.to_path_buf()))?;
    if stack.contains(&canon) {
        return Err(CliError::Usage(format!(
            "config include cycle at {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&canon)?;
    let dir = canon.parent().map(Path::to_path_buf).unwrap_or_default();
    stack.push(canon);
    for (idx, raw) in text.lines().enumerate() {
        let at = |msg: String| CliError::Usage(format!("{}:{}: {msg}", path.display(), idx + 1));
        match classify_line(raw) {
            Line::Blank => {}
            Line::Include(rel) => apply_file(cfg, &dir.join(rel), stack)?,
            Line::Pair(key, value) => set_key(cfg, key, value).map_err(at)?,
            Line::Bad(msg) => return Err(at(msg)),
        }
    }
    stack.pop();
    Ok(())
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("bad value for {key}: {e}"))
}

fn set_key(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "seed" => cfg.seed = parse_as(key, value)?,
        "data.n_train" => cfg.data.n_train = parse_as(key, value)?,
        "data.n_eval" => cfg.data.n_eval = parse_as(key, value)?,
        "data.image_size" => cfg.data.image_size = parse_as(key, value)?,
        "model.backbone" => {
            cfg.model.backbone_size = match value {
                "small" => BackboneSize::Small,
                "medium" => BackboneSize::Medium,
                "large" => BackboneSize::Large,
                other => {
                    return Err(format!(
                        "bad value for model.backbone: {other:?} (expected small, medium, or large)"
                    ))
                }
            }
        }
        "model.fpn_levels" => cfg.model.fpn_levels = parse_as(key, value)?,
        "model.fpn_channels" => cfg.model.fpn_channels = parse_as(key, value)?,
        "model.heatmap_stride" => cfg.model.heatmap_stride = parse_as(key, value)?,
        "model.roi_size" => cfg.model.roi_size = parse_as(key, value)?,
        "model.grl_lambda" => cfg.model.grl_lambda = parse_as(key, value)?,
        "train.stage1_steps" => cfg.train.stage1_steps = parse_as(key, value)?,
        "train.stage2_steps" => cfg.train.stage2_steps = parse_as(key, value)?,
        "train.checkpoint_every" => cfg.train.checkpoint_every = parse_as(key, value)?,
        "train.lr0" => cfg.train.lr0 = parse_as(key, value)?,
        "train.momentum" => cfg.train.momentum = parse_as(key, value)?,
        "train.decay_every" => cfg.train.decay_every = parse_as(key, value)?,
        "train.decay_factor" => cfg.train.decay_factor = parse_as(key, value)?,
        "train.alpha" => cfg.train.weights.alpha = parse_as(key, value)?,
        "train.beta" => cfg.train.weights.beta = parse_as(key, value)?,
        "train.gamma" => cfg.train.weights.gamma = parse_as(key, value)?,
        "train.curriculum_start" => cfg.train.curriculum.p_start = parse_as(key, value)?,
        "train.curriculum_end" => cfg.train.curriculum.p_end = parse_as(key, value)?,
        "train.augment_flip" => cfg.train.augment.flip = parse_as(key, value)?,
        "train.augment_blur" => cfg.train.augment.blur = parse_as(key, value)?,
        "train.augment_brightness" => cfg.train.augment.brightness = parse_as(key, value)?,
        "eval.sweep_seeds" => {
            let seeds = value
                .split(',')
                .map(|part| parse_as::<u64>(key, part.trim()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            cfg.eval.sweep_seeds = seeds;
        }
        other => return Err(format!("unknown config key {other:?}")),
    }
    Ok(())
}

/// Write flat `key = value` pairs (used for machine-readable eval output).
pub fn write_kv_file(path: &Path, pairs: &BTreeMap<String, String>) -> Result<()> {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k} = {v}");
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Read a flat `key = value` file back into a map (comments allowed).
pub fn read_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| CliError::MissingInput("key-value report".into(), path.to_path_buf()))?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        match classify_line(raw) {
            Line::Blank => {}
            Line::Pair(k, v) => {
                map.insert(k.to_string(), v.to_string());
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    idx + 1
                )))
            }
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pedpose_core::train::CurriculumShape;

    fn nondefault() -> RunConfig {
        let mut cfg = RunConfig {
            seed: 42,
            ..RunConfig::default()
        };
        cfg.data.n_train = 12;
        cfg.data.n_eval = 5;
        cfg.data.image_size = 32;
        cfg.model.backbone_size = BackboneSize::Medium;
        cfg.model.fpn_channels = 8;
        cfg.model.roi_size = 4;
        cfg.model.grl_lambda = 0.25;
        cfg.train.stage1_steps = 10;
        cfg.train.stage2_steps = 30;
        cfg.train.checkpoint_every = 7;
        cfg.train.lr0 = 0.003;
        cfg.train.weights.beta = 0.0;
        cfg.train.curriculum.p_end = 0.31;
        cfg.train.augment.blur = false;
        cfg.eval.sweep_seeds = vec![3, 9];
        cfg
    }

    #[test]
    fn text_round_trip_is_identity() {
        for cfg in [RunConfig::default(), nondefault()] {
            let parsed = RunConfig::from_text(&cfg.to_text()).unwrap();
            assert_eq!(parsed, cfg);
        }
    }

    #[test]
    fn later_assignments_win() {
        let cfg = RunConfig::from_text("seed = 1\nseed = 2\n").unwrap();
        assert_eq!(cfg.seed, 2);
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg =
            RunConfig::from_text("# top\n\n  seed = 9  # trailing note\n\t\ndata.n_eval=3\n")
                .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.data.n_eval, 3);
    }

    #[test]
    fn unknown_key_is_a_usage_error() {
        let err = RunConfig::from_text("sed = 1\n").unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_USAGE);
        assert!(err.to_string().contains("unknown config key"), "{err}");
    }

    #[test]
    fn malformed_line_is_a_usage_error() {
        let err = RunConfig::from_text("seed\n").unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn bad_number_reports_key_and_line() {
        let err = RunConfig::from_text("seed = 1\ntrain.lr0 = fast\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("train.lr0"), "{msg}");
    }

    #[test]
    fn include_splices_defaults_that_later_lines_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), "seed = 5\ndata.n_train = 9\n").unwrap();
        std::fs::write(
            dir.path().join("top.cfg"),
            "include base.cfg\nseed = 6\n",
        )
        .unwrap();
        let cfg = RunConfig::from_file(&dir.path().join("top.cfg")).unwrap();
        assert_eq!(cfg.seed, 6);
        assert_eq!(cfg.data.n_train, 9);
    }

    #[test]
    fn include_is_resolved_relative_to_the_including_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/base.cfg"), "seed = 11\n").unwrap();
        std::fs::write(dir.path().join("sub/top.cfg"), "include base.cfg\n").unwrap();
        let cfg = RunConfig::from_file(&dir.path().join("sub/top.cfg")).unwrap();
        assert_eq!(cfg.seed, 11);
    }

    #[test]
    fn include_cycle_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.cfg"), "include b.cfg\n").unwrap();
        std::fs::write(dir.path().join("b.cfg"), "include a.cfg\n").unwrap();
        let err = RunConfig::from_file(&dir.path().join("a.cfg")).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_USAGE);
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn diamond_includes_are_allowed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.cfg"), "seed = 3\n").unwrap();
        std::fs::write(dir.path().join("b.cfg"), "include d.cfg\n").unwrap();
        std::fs::write(dir.path().join("c.cfg"), "include d.cfg\n").unwrap();
        std::fs::write(dir.path().join("a.cfg"), "include b.cfg\ninclude c.cfg\n").unwrap();
        let cfg = RunConfig::from_file(&dir.path().join("a.cfg")).unwrap();
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn missing_config_file_maps_to_missing_input() {
        let err = RunConfig::from_file(Path::new("/nonexistent/x.cfg")).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_MISSING_INPUT);
    }

    #[test]
    fn invalid_values_fail_validation() {
        // Stride 3 is not a power of two -> core model validation rejects it.
        assert!(RunConfig::from_text("model.heatmap_stride = 3\n").is_err());
        assert!(RunConfig::from_text("eval.sweep_seeds = \n").is_err());
    }

    #[test]
    fn train_for_run_folds_in_master_seed() {
        let cfg = RunConfig::from_text("seed = 77\n").unwrap();
        let t = cfg.train_for_run();
        assert_eq!(t.seed, 77);
        assert_eq!(t.curriculum.shape, CurriculumShape::Linear);
    }

    #[test]
    fn kv_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.kv");
        let mut pairs = BTreeMap::new();
        pairs.insert("ap".to_string(), "0.5".to_string());
        pairs.insert("mr_r".to_string(), "absent".to_string());
        write_kv_file(&path, &pairs).unwrap();
        assert_eq!(read_kv_file(&path).unwrap(), pairs);
    }
}
