//! `pedpose train`: two-stage training plus a final evaluation report.

use std::path::PathBuf;

use pedpose_core::metrics::{evaluate_dataset, EvalOptions, EvalReport};
use pedpose_core::nets::{init_components, load_checkpoint};
use pedpose_core::train::{run_training, RunOptions, RunPaths, RunSummary};

use crate::config::{write_kv_file, RunConfig};
use crate::error::{CliError, Result};

use super::{annotated_twin, load_split};

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: RunConfig,
    /// Directory holding the four dataset splits.
    pub data_root: PathBuf,
    /// Run directory for checkpoints, logs, and reports.
    pub run_dir: PathBuf,
    /// Continue from the newest checkpoint instead of starting fresh.
    pub resume: bool,
    /// Discard an existing run directory and start over.
    pub force: bool,
    /// Shrink the model and step counts for a fast end-to-end exercise.
    pub smoke: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub summary: RunSummary,
    pub source_report: EvalReport,
    pub target_report: EvalReport,
    /// Set when beta == 0: whether the domain classifier parameters are
    /// bit-identical to their initialization, as they must be.
    pub domain_classifier_frozen: Option<bool>,
}

/// Shrink a config for `--smoke`: tiny model, a handful of steps. Dataset
/// files are used as-is; only the compute budget changes.
pub fn apply_smoke(cfg: &mut RunConfig) {
    cfg.model.fpn_channels = cfg.model.fpn_channels.min(8);
    cfg.model.roi_size = cfg.model.roi_size.min(4);
    cfg.train.stage1_steps = cfg.train.stage1_steps.min(6);
    cfg.train.stage2_steps = cfg.train.stage2_steps.min(40);
    cfg.train.checkpoint_every = cfg.train.checkpoint_every.min(20);
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = args.config.clone();
    if args.smoke {
        apply_smoke(&mut cfg);
    }
    cfg.validate()?;

    let source_train = load_split(&args.data_root, "source-train")?;
    let target_train = load_split(&args.data_root, "target-train")?;
    let source_eval = load_split(&args.data_root, "source-eval")?;
    let target_eval = load_split(&args.data_root, "target-eval")?;

    let paths = RunPaths::new(&args.run_dir);
    let has_artifacts = paths.log.exists() || paths.final_ckpt.exists();
    if has_artifacts && !args.resume {
        if args.force {
            std::fs::remove_dir_all(&args.run_dir)?;
        } else {
            return Err(CliError::Inconsistent(format!(
                "{} already holds a run; pass --resume to continue it or --force to discard it",
                args.run_dir.display()
            )));
        }
    }

    let tcfg = cfg.train_for_run();
    let beta_zero = tcfg.weights.beta == 0.0;
    if beta_zero {
        println!("beta = 0: domain classifier will stay frozen at initialization");
    }

    let opts = RunOptions {
        resume: args.resume,
        stop_after: None,
    };
    let summary = run_training(
        &args.run_dir,
        &tcfg,
        &cfg.model,
        &source_train,
        &target_train,
        &opts,
    )?;

    let final_ckpt = summary.final_checkpoint.clone().ok_or_else(|| {
        CliError::Inconsistent("training finished without a final checkpoint".into())
    })?;
    let ckpt = load_checkpoint(&final_ckpt)?;

    let domain_classifier_frozen = if beta_zero {
        let fresh = init_components(&cfg.model, tcfg.seed)?;
        let frozen = fresh.component_digest("dom_cls")
            == ckpt.params.component_digest("dom_cls");
        println!(
            "domain classifier after training: {}",
            if frozen { "frozen (unchanged)" } else { "CHANGED unexpectedly" }
        );
        Some(frozen)
    } else {
        None
    };

    // Final evaluation on both eval splits; the target split is scored
    // against its regenerated annotated twin.
    let eopts = EvalOptions {
        sweep_seeds: cfg.eval.sweep_seeds.clone(),
        ..EvalOptions::default()
    };
    let source_report = evaluate_dataset(
        &ckpt.params,
        &cfg.model,
        &source_eval.samples,
        None,
        &eopts,
    )?;
    let twin = annotated_twin(&target_eval)?;
    let target_report = evaluate_dataset(
        &ckpt.params,
        &cfg.model,
        &target_eval.samples,
        Some(&twin.samples),
        &eopts,
    )?;

    write_reports(&args.run_dir, &source_report, &target_report)?;

    Ok(TrainOutcome {
        summary,
        source_report,
        target_report,
        domain_classifier_frozen,
    })
}

/// Write both eval reports as rendered text and flat key-value files.
pub fn write_reports(
    dir: &std::path::Path,
    source: &EvalReport,
    target: &EvalReport,
) -> Result<()> {
    for (name, report) in [("source", source), ("target", target)] {
        std::fs::write(
            dir.join(format!("eval-{name}.txt")),
            report.render_text(),
        )?;
        let pairs = report.flat_pairs().into_iter().collect();
        write_kv_file(&dir.join(format!("eval-{name}.kv")), &pairs)?;
    }
    Ok(())
}
