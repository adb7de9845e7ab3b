//! Two-stage training orchestration.
//!
//! Stage 1 pretrains the two detection+segmentation networks, one per
//! distribution. Stage 2 alternates source/target samples through the
//! matching network, extracts masked instance features, and trains the
//! shared pose estimator with adversarial domain adaptation. Updates are
//! asymmetric: the pose decoder moves only on source steps, because only
//! source samples carry pose labels.

pub mod augment;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayD};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentConfig, AugmentDecision};

use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossParts, LossWeights};
use crate::nets::{
    component_of, det_loss_graph, detect_forward, domain_classify, domain_components,
    encode_det_targets, fpn_encode, load_checkpoint, pose_forward, pose_target_maps,
    roi_extract_masked, save_checkpoint, seg_targets, segment_forward, Checkpoint, ModelConfig,
    ParamStore, Session,
};
use crate::rng::{derive_seed, stream_rng};
use crate::sample::{Domain, Sample};
use crate::synthdata::Dataset;
use crate::tensor::VarId;

/// Stream tags reserved by the training loop (the data generator owns 0-3).
const STREAM_AUGMENT: u64 = 16;
const STREAM_CURRICULUM: u64 = 17;

/// Version string recorded in run manifests.
pub const CODE_VERSION: &str = concat!("pedpose-core v", env!("CARGO_PKG_VERSION"));

/// Global L2 bound applied to each step's gradients before the momentum
/// update (see [`Optimizer::apply`]).
pub const GRAD_CLIP_NORM: f32 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumShape {
    Linear,
}

/// Feature-masking curriculum: the masked fraction grows from `p_start`
/// at step 0 to `p_end` at the final stage-2 step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub p_start: f32,
    pub p_end: f32,
    pub shape: CurriculumShape,
}

impl Default for Curriculum {
    fn default() -> Self {
        Curriculum {
            p_start: 0.0,
            p_end: 0.5,
            shape: CurriculumShape::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f32,
    pub momentum: f32,
    /// Steps between learning-rate decays.
    pub decay_every: usize,
    pub decay_factor: f32,
    /// Fixed at 1: every step consumes exactly one sample.
    pub batch_size: usize,
    /// Pretraining steps per distribution network.
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub checkpoint_every: usize,
    pub curriculum: Curriculum,
    pub weights: LossWeights,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            momentum: 0.9,
            decay_every: 1500,
            decay_factor: 10.0,
            batch_size: 1,
            stage1_steps: 400,
            stage2_steps: 5000,
            checkpoint_every: 500,
            curriculum: Curriculum::default(),
            weights: LossWeights::default(),
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid_arg(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid_arg(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::invalid_arg("decay_every must be at least 1"));
        }
        if !(self.decay_factor > 1.0 && self.decay_factor.is_finite()) {
            return Err(Error::invalid_arg(format!(
                "decay_factor must exceed 1, got {}",
                self.decay_factor
            )));
        }
        if self.batch_size != 1 {
            return Err(Error::invalid_arg(format!(
                "batch_size is fixed at 1, got {}",
                self.batch_size
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid_arg("checkpoint_every must be at least 1"));
        }
        let c = &self.curriculum;
        if !(c.p_start.is_finite() && c.p_end.is_finite()) {
            return Err(Error::invalid_arg("curriculum endpoints must be finite"));
        }
        if !(0.0..1.0).contains(&c.p_start) || !(0.0..1.0).contains(&c.p_end) {
            return Err(Error::invalid_arg("curriculum endpoints must lie in [0, 1)"));
        }
        if c.p_start > c.p_end {
            return Err(Error::invalid_arg(format!(
                "curriculum start {} exceeds end {}",
                c.p_start, c.p_end
            )));
        }
        for (name, v) in [
            ("alpha", self.weights.alpha),
            ("beta", self.weights.beta),
            ("gamma", self.weights.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid_arg(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Global step index within the run.
    pub step: usize,
    /// 1 = detection/segmentation pretraining, 2 = pose + adaptation.
    pub stage: u8,
    pub domain: Domain,
    pub losses: LossBreakdown,
    pub lr: f32,
    /// Curriculum mask fraction used this step (0 during stage 1).
    pub mask_fraction: f32,
    pub wall_ms: f64,
    /// True when the drawn sample had no instances and the step did nothing.
    pub skipped: bool,
}

/// Stepped learning rate: `lr0 / decay_factor^floor(step / decay_every)`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f32 {
    let k = (step / cfg.decay_every) as i32;
    cfg.lr0 / cfg.decay_factor.powi(k)
}

/// Linear curriculum fraction at `step` of `total`. Endpoints are exact.
pub fn mask_schedule(step: usize, total: usize, p_start: f32, p_end: f32) -> f32 {
    if total == 0 || step == 0 {
        return p_start;
    }
    if step >= total {
        return p_end;
    }
    p_start + (p_end - p_start) * (step as f32 / total as f32)
}

/// Momentum-SGD state: one velocity buffer per parameter.
pub struct Optimizer {
    velocity: ParamStore,
}

impl Optimizer {
    pub fn new(params: &ParamStore) -> Self {
        Optimizer {
            velocity: params.zeros_like(),
        }
    }

    /// Rebuild from a checkpointed velocity store.
    pub fn from_velocity(velocity: ParamStore) -> Self {
        Optimizer { velocity }
    }

    pub fn velocity(&self) -> &ParamStore {
        &self.velocity
    }

    /// Apply one momentum update (`v = m*v + g; p -= lr*v`) to every
    /// gradient entry whose component appears in `allowed`. Parameters
    /// outside the allowed set keep both value and velocity bit-identical.
    /// Gradients are first rescaled so their global L2 norm over the allowed
    /// set never exceeds [`GRAD_CLIP_NORM`]; at the pinned step size the raw
    /// updates otherwise grow an oscillation that eventually overflows f32.
    pub fn apply(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, ArrayD<f32>>,
        allowed: &[&str],
        lr: f32,
        momentum: f32,
    ) {
        let norm_sq: f32 = grads
            .iter()
            .filter(|(name, _)| allowed.contains(&component_of(name)))
            .flat_map(|(_, g)| g.iter())
            .map(|&g| g * g)
            .sum();
        let norm = norm_sq.sqrt();
        let clip = if norm > GRAD_CLIP_NORM { GRAD_CLIP_NORM / norm } else { 1.0 };
        for (name, g) in grads {
            if !allowed.contains(&component_of(name)) {
                continue;
            }
            let v = self.velocity.get_mut(name);
            v.zip_mut_with(g, |v, &g| *v = momentum * *v + clip * g);
            params.get_mut(name).zip_mut_with(v, |p, &v| *p -= lr * v);
        }
    }
}

/// Components a stage-1 step may move: the matching distribution network.
pub fn stage1_components(domain: Domain) -> [&'static str; 3] {
    match domain {
        Domain::Source => ["enc_c", "det_c", "seg_c"],
        Domain::Target => ["enc_m", "det_m", "seg_m"],
    }
}

/// Components a stage-2 step may move. The pose decoder joins only on
/// source steps; pose labels exist nowhere else.
pub fn stage2_components(domain: Domain) -> Vec<&'static str> {
    let mut v = stage1_components(domain).to_vec();
    v.push("pose_enc");
    v.push("dom_cls");
    if domain == Domain::Source {
        v.push("pose_dec");
    }
    v
}

/// Random contiguous zero block covering roughly `fraction` of an
/// `roi x roi` grid. Returns `None` for a non-positive fraction. Always
/// consumes exactly three RNG draws so skipping instances elsewhere never
/// shifts the stream.
pub fn curriculum_block_mask(
    roi: usize,
    fraction: f32,
    rng: &mut impl Rng,
) -> Option<Array2<f32>> {
    if fraction <= 0.0 || roi == 0 {
        return None;
    }
    let f = fraction.min(0.95);
    let target = f * (roi * roi) as f32;
    let aspect: f32 = rng.random_range(0.6..=1.6667);
    let bh = ((target.sqrt() * aspect.sqrt()).round() as usize).clamp(1, roi);
    let bw = (((target / bh as f32).round()) as usize).clamp(1, roi);
    let r0 = rng.random_range(0..=(roi - bh));
    let c0 = rng.random_range(0..=(roi - bw));
    let mut m = Array2::<f32>::ones((roi, roi));
    for r in r0..r0 + bh {
        for c in c0..c0 + bw {
            m[[r, c]] = 0.0;
        }
    }
    Some(m)
}

/// Shared detection + segmentation subgraph for one sample. Returns the
/// combined `L_det + alpha * L_seg` node, the raw term values, and the
/// finest pyramid level for downstream instance extraction.
fn mtl_subgraph(
    sess: &mut Session,
    sample: &Sample,
    mcfg: &ModelConfig,
    alpha: f32,
) -> Result<(VarId, f64, f64, VarId)> {
    let (enc, det, seg) = domain_components(sample.domain);
    let pyr = fpn_encode(sess, enc, &sample.image, mcfg)?;
    let head = detect_forward(sess, det, &pyr, mcfg);
    let obj_shape = sess.g.value(head.obj_prob).shape().to_vec();
    let grid = (obj_shape[1], obj_shape[2]);
    let targets = encode_det_targets(&sample.instances, grid, mcfg.heatmap_stride);
    let (l_det, _no_pos) = det_loss_graph(&mut sess.g, &head, &targets);

    let seg_logits = segment_forward(sess, seg, &pyr, mcfg);
    let seg_probs = sess.g.sigmoid(seg_logits);
    let t = seg_targets(&sample.instances, (sample.height(), sample.width()));
    let l_seg = sess.g.bce_mean(seg_probs, t.into_dyn());

    let det_val = f64::from(sess.g.scalar_value(l_det));
    let seg_val = f64::from(sess.g.scalar_value(l_seg));
    let mut total = l_det;
    if alpha > 0.0 {
        let scaled = sess.g.scale(l_seg, alpha);
        total = sess.g.add(total, scaled);
    }
    Ok((total, det_val, seg_val, pyr.levels[0]))
}

fn parts_for_domain(domain: Domain, det: f64, seg: f64, dc: f64, pe: f64) -> LossParts {
    let mut parts = LossParts {
        dc,
        pe,
        ..LossParts::default()
    };
    match domain {
        Domain::Source => {
            parts.det_c = det;
            parts.seg_c = seg;
        }
        Domain::Target => {
            parts.det_m = det;
            parts.seg_m = seg;
        }
    }
    parts
}

fn skipped_report(step: usize, stage: u8, domain: Domain, lr: f32, mask_fraction: f32) -> StepReport {
    StepReport {
        step,
        stage,
        domain,
        losses: LossBreakdown::from_parts(&LossParts::default(), &LossWeights::default())
            .expect("zero losses are finite"),
        lr,
        mask_fraction,
        wall_ms: 0.0,
        skipped: true,
    }
}

/// One pretraining step: detection + segmentation loss for the sample's
/// own distribution network; everything else stays untouched.
pub fn train_step_stage1(
    sample: &Sample,
    store: &mut ParamStore,
    opt: &mut Optimizer,
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
    local_step: usize,
) -> Result<StepReport> {
    let start = Instant::now();
    let lr = lr_schedule(local_step, tcfg);
    if sample.instances.is_empty() {
        return Ok(skipped_report(local_step, 1, sample.domain, lr, 0.0));
    }
    let alpha = tcfg.weights.alpha;
    let (grads, det_val, seg_val) = {
        let mut sess = Session::new(store, true);
        let (total, det_val, seg_val, _) = mtl_subgraph(&mut sess, sample, mcfg, alpha)?;
        let grads = sess.g.backward(total);
        (sess.collect_grads(&grads), det_val, seg_val)
    };
    let allowed = stage1_components(sample.domain);
    opt.apply(store, &grads, &allowed, lr, tcfg.momentum);
    let parts = parts_for_domain(sample.domain, det_val, seg_val, 0.0, 0.0);
    Ok(StepReport {
        step: local_step,
        stage: 1,
        domain: sample.domain,
        losses: LossBreakdown::from_parts(&parts, &tcfg.weights)?,
        lr,
        mask_fraction: 0.0,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        skipped: false,
    })
}

/// One stage-2 step: the full multi-task objective on one sample, with
/// curriculum feature masking and the asymmetric update rule.
pub fn train_step_stage2(
    sample: &Sample,
    store: &mut ParamStore,
    opt: &mut Optimizer,
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
    local_step: usize,
) -> Result<StepReport> {
    let start = Instant::now();
    let lr = lr_schedule(local_step, tcfg);
    let mask_fraction = mask_schedule(
        local_step,
        tcfg.stage2_steps,
        tcfg.curriculum.p_start,
        tcfg.curriculum.p_end,
    );
    if sample.instances.is_empty() {
        return Ok(skipped_report(local_step, 2, sample.domain, lr, mask_fraction));
    }
    let w = &tcfg.weights;
    let want_pose = w.gamma > 0.0 && sample.domain == Domain::Source;
    let want_domain = w.beta > 0.0;
    let mut mask_rng = stream_rng(
        derive_seed(tcfg.seed, STREAM_CURRICULUM),
        local_step as u64,
    );

    let (grads, parts) = {
        let mut sess = Session::new(store, true);
        let (mut total, det_val, seg_val, finest) =
            mtl_subgraph(&mut sess, sample, mcfg, w.alpha)?;

        let mut pe_terms: Vec<VarId> = Vec::new();
        let mut dc_terms: Vec<VarId> = Vec::new();
        if want_pose || want_domain {
            let heat = mcfg.heat_size();
            for inst in &sample.instances {
                let extra = curriculum_block_mask(mcfg.roi_size, mask_fraction, &mut mask_rng);
                let feat = match roi_extract_masked(
                    &mut sess,
                    finest,
                    &inst.bbox,
                    &inst.mask,
                    mcfg,
                    extra.as_ref(),
                ) {
                    Ok(f) => f,
                    Err(Error::InvalidBox { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let pose = pose_forward(&mut sess, feat, mcfg);
                if want_domain {
                    let p = domain_classify(&mut sess, pose.embedding, mcfg);
                    let label = match sample.domain {
                        Domain::Source => 1.0f32,
                        Domain::Target => 0.0,
                    };
                    let target = ArrayD::from_elem(vec![1], label);
                    dc_terms.push(sess.g.bce_mean(p, target));
                }
                if want_pose {
                    let kps = inst
                        .keypoints
                        .as_ref()
                        .expect("source samples carry keypoints");
                    let (maps, include) = pose_target_maps(kps, &inst.bbox, heat)?;
                    if include.iter().any(|&b| b) {
                        pe_terms.push(sess.g.mse_channel_masked(
                            pose.heatmaps,
                            maps.into_dyn(),
                            include,
                        ));
                    }
                }
            }
        }

        let mean_of = |sess: &mut Session, terms: &[VarId]| -> Option<VarId> {
            let (&first, rest) = terms.split_first()?;
            let sum = rest.iter().fold(first, |acc, &t| sess.g.add(acc, t));
            Some(sess.g.scale(sum, 1.0 / terms.len() as f32))
        };
        let mut dc_val = 0.0f64;
        if let Some(dc) = mean_of(&mut sess, &dc_terms) {
            dc_val = f64::from(sess.g.scalar_value(dc));
            let scaled = sess.g.scale(dc, w.beta);
            total = sess.g.add(total, scaled);
        }
        let mut pe_val = 0.0f64;
        if let Some(pe) = mean_of(&mut sess, &pe_terms) {
            pe_val = f64::from(sess.g.scalar_value(pe));
            let scaled = sess.g.scale(pe, w.gamma);
            total = sess.g.add(total, scaled);
        }

        let grads = sess.g.backward(total);
        let parts = parts_for_domain(sample.domain, det_val, seg_val, dc_val, pe_val);
        (sess.collect_grads(&grads), parts)
    };
    let allowed = stage2_components(sample.domain);
    opt.apply(store, &grads, &allowed, lr, tcfg.momentum);
    Ok(StepReport {
        step: local_step,
        stage: 2,
        domain: sample.domain,
        losses: LossBreakdown::from_parts(&parts, w)?,
        lr,
        mask_fraction,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        skipped: false,
    })
}

/// Pretrain one distribution network on its own dataset. The optimizer
/// state lives in `opt` so a later stage can keep accumulating momentum.
pub fn pretrain_mtl(
    dataset: &[Sample],
    store: &mut ParamStore,
    opt: &mut Optimizer,
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
) -> Result<Vec<StepReport>> {
    tcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("pretraining dataset is empty".into()));
    }
    let domain = dataset[0].domain;
    if dataset.iter().any(|s| s.domain != domain) {
        return Err(Error::Dataset(
            "pretraining dataset mixes source and target samples".into(),
        ));
    }
    let aug_base = derive_seed(tcfg.seed, STREAM_AUGMENT);
    let mut reports = Vec::with_capacity(tcfg.stage1_steps);
    for step in 0..tcfg.stage1_steps {
        let raw = &dataset[step % dataset.len()];
        let s = augment(raw, &tcfg.augment, derive_seed(aug_base, step as u64));
        reports.push(train_step_stage1(&s, store, opt, tcfg, mcfg, step)?);
    }
    Ok(reports)
}

/// File layout of one training run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub log: PathBuf,
    pub checkpoints: PathBuf,
    pub final_checkpoint: PathBuf,
    pub final_metrics: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths {
            root: root.to_path_buf(),
            config: root.join("config.json"),
            manifest: root.join("manifest.json"),
            log: root.join("log.jsonl"),
            checkpoints: root.join("checkpoints"),
            final_checkpoint: root.join("final.ckpt"),
            final_metrics: root.join("final_train_metrics.json"),
        }
    }

    pub fn checkpoint_at(&self, step: usize) -> PathBuf {
        self.checkpoints.join(format!("step-{step:06}.ckpt"))
    }
}

/// Manifest recorded at the top of every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub seed: u64,
    pub source_params_hash: String,
    pub source_base_seed: u64,
    pub n_source: usize,
    pub target_params_hash: String,
    pub target_base_seed: u64,
    pub n_target: usize,
    pub curriculum_shape: CurriculumShape,
    pub total_steps: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from the newest checkpoint in the run directory.
    pub resume: bool,
    /// Stop (with a checkpoint) after this many global steps.
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    /// Steps executed by this invocation.
    pub executed: usize,
    /// Global steps completed so far (= total when the run finished).
    pub completed: usize,
    pub total_steps: usize,
    pub final_checkpoint: Option<PathBuf>,
    pub params_digest: String,
    pub history: Vec<StepReport>,
}

/// Aggregate statistics persisted once a run finishes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalTrainMetrics {
    pub total_steps: usize,
    pub stage2_steps: usize,
    pub mean_recent_total_loss: f64,
    pub mean_recent_pose_loss: f64,
    pub mean_recent_domain_loss: f64,
    pub skipped_steps: usize,
    pub params_digest: String,
}

struct Phase {
    stage: u8,
    domain: Domain,
    local: usize,
}

fn phase_of(gstep: usize, s1: usize) -> Phase {
    if gstep < s1 {
        Phase { stage: 1, domain: Domain::Source, local: gstep }
    } else if gstep < 2 * s1 {
        Phase { stage: 1, domain: Domain::Target, local: gstep - s1 }
    } else {
        let local = gstep - 2 * s1;
        let domain = if local % 2 == 0 { Domain::Source } else { Domain::Target };
        Phase { stage: 2, domain, local }
    }
}

fn newest_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(step) = name
            .strip_prefix("step-")
            .and_then(|r| r.strip_suffix(".ckpt"))
            .and_then(|r| r.parse::<usize>().ok())
        {
            if best.as_ref().map(|(b, _)| step > *b).unwrap_or(true) {
                best = Some((step, path));
            }
        }
    }
    Ok(best)
}

/// Keep only the first `keep` log lines (used when a resumed run rewinds
/// to its last checkpoint).
fn truncate_log(path: &Path, keep: usize) -> Result<()> {
    if !path.is_file() {
        return Ok(());
    }
    let lines: Vec<String> = BufReader::new(File::open(path)?)
        .lines()
        .collect::<std::io::Result<_>>()?;
    let mut f = File::create(path)?;
    for line in lines.iter().take(keep) {
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Run the two-stage recipe end to end, writing the full run directory.
/// The loop is a pure function of (configs, datasets, seed) plus the
/// optional checkpoint it resumes from, so two invocations with the same
/// inputs produce bit-identical parameters.
pub fn run_training(
    run_dir: &Path,
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
    source: &Dataset,
    target: &Dataset,
    opts: &RunOptions,
) -> Result<RunSummary> {
    tcfg.validate()?;
    mcfg.validate()?;
    if source.manifest.params.domain != Domain::Source {
        return Err(Error::Dataset("source dataset has target-domain parameters".into()));
    }
    if target.manifest.params.domain != Domain::Target {
        return Err(Error::Dataset("target dataset has source-domain parameters".into()));
    }
    if source.samples.is_empty() || target.samples.is_empty() {
        return Err(Error::Dataset("training datasets must be non-empty".into()));
    }

    let paths = RunPaths::new(run_dir);
    fs::create_dir_all(&paths.checkpoints)?;
    let total = 2 * tcfg.stage1_steps + tcfg.stage2_steps;

    // Restore or initialize parameters and optimizer state.
    let (mut store, mut opt, start) = if opts.resume {
        match newest_checkpoint(&paths.checkpoints)? {
            Some((_, path)) => {
                let ckpt = load_checkpoint(&path)?;
                if ckpt.config != *mcfg {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint at {} was trained with a different model configuration",
                        path.display()
                    )));
                }
                (ckpt.params, Optimizer::from_velocity(ckpt.velocity), ckpt.step as usize)
            }
            None => {
                let store = crate::nets::init_components(mcfg, tcfg.seed)?;
                let opt = Optimizer::new(&store);
                (store, opt, 0)
            }
        }
    } else {
        let store = crate::nets::init_components(mcfg, tcfg.seed)?;
        let opt = Optimizer::new(&store);
        (store, opt, 0)
    };

    // Fresh runs (and rewound resumes) rewrite the bookkeeping files.
    if start == 0 {
        let cfg_json = serde_json::json!({ "train": tcfg, "model": mcfg });
        fs::write(&paths.config, serde_json::to_string_pretty(&cfg_json)?)?;
        let manifest = RunManifest {
            code_version: CODE_VERSION.to_string(),
            seed: tcfg.seed,
            source_params_hash: source.manifest.params_hash.clone(),
            source_base_seed: source.manifest.base_seed,
            n_source: source.samples.len(),
            target_params_hash: target.manifest.params_hash.clone(),
            target_base_seed: target.manifest.base_seed,
            n_target: target.samples.len(),
            curriculum_shape: tcfg.curriculum.shape,
            total_steps: total,
        };
        fs::write(&paths.manifest, serde_json::to_string_pretty(&manifest)?)?;
        let _ = File::create(&paths.log)?;
    } else {
        truncate_log(&paths.log, start)?;
    }

    let mut log = OpenOptions::new().append(true).open(&paths.log)?;
    let aug_base = derive_seed(tcfg.seed, STREAM_AUGMENT);
    let stop_at = opts.stop_after.map(|s| s.min(total)).unwrap_or(total);
    let mut history = Vec::new();

    let mut gstep = start;
    while gstep < stop_at {
        let phase = phase_of(gstep, tcfg.stage1_steps);
        let pool = match phase.domain {
            Domain::Source => &source.samples,
            Domain::Target => &target.samples,
        };
        let idx = match phase.stage {
            1 => phase.local % pool.len(),
            _ => (phase.local / 2) % pool.len(),
        };
        let s = augment(&pool[idx], &tcfg.augment, derive_seed(aug_base, gstep as u64));
        let mut report = match phase.stage {
            1 => train_step_stage1(&s, &mut store, &mut opt, tcfg, mcfg, phase.local)?,
            _ => train_step_stage2(&s, &mut store, &mut opt, tcfg, mcfg, phase.local)?,
        };
        report.step = gstep;
        serde_json::to_writer(&mut log, &report)?;
        log.write_all(b"\n")?;
        history.push(report);
        gstep += 1;

        if gstep % tcfg.checkpoint_every == 0 || gstep == stop_at {
            let ckpt = Checkpoint {
                config: mcfg.clone(),
                step: gstep as u64,
                params: store.clone(),
                velocity: opt.velocity().clone(),
            };
            save_checkpoint(&ckpt, &paths.checkpoint_at(gstep))?;
        }
    }
    log.flush()?;

    let digest = store.digest();
    let final_checkpoint = if gstep == total {
        let ckpt = Checkpoint {
            config: mcfg.clone(),
            step: total as u64,
            params: store.clone(),
            velocity: opt.velocity().clone(),
        };
        save_checkpoint(&ckpt, &paths.final_checkpoint)?;
        // Aggregate over the on-disk log, which covers the whole run even
        // when this invocation only resumed the tail of it.
        let all_reports: Vec<StepReport> = BufReader::new(File::open(&paths.log)?)
            .lines()
            .map(|l| Ok(serde_json::from_str(&l?)?))
            .collect::<Result<_>>()?;
        let recent: Vec<&StepReport> = all_reports
            .iter()
            .filter(|r| r.stage == 2 && !r.skipped)
            .rev()
            .take(50)
            .collect();
        let mean = |f: &dyn Fn(&StepReport) -> f64| -> f64 {
            if recent.is_empty() {
                0.0
            } else {
                recent.iter().map(|r| f(r)).sum::<f64>() / recent.len() as f64
            }
        };
        let metrics = FinalTrainMetrics {
            total_steps: total,
            stage2_steps: tcfg.stage2_steps,
            mean_recent_total_loss: mean(&|r| r.losses.total),
            mean_recent_pose_loss: mean(&|r| r.losses.pe),
            mean_recent_domain_loss: mean(&|r| r.losses.dc),
            skipped_steps: all_reports.iter().filter(|r| r.skipped).count(),
            params_digest: digest.clone(),
        };
        fs::write(&paths.final_metrics, serde_json::to_string_pretty(&metrics)?)?;
        Some(paths.final_checkpoint.clone())
    } else {
        None
    };

    Ok(RunSummary {
        run_dir: run_dir.to_path_buf(),
        executed: gstep - start,
        completed: gstep,
        total_steps: total,
        final_checkpoint,
        params_digest: digest,
        history,
    })
}
