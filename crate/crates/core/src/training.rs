//! Phase orchestration: the alternating main/orthogonality loop with two
//! independent Adam optimizers, backbone pretraining, full fine-tuning,
//! metrics logging and run manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::adapters::{AdapterKind, Phase};
use crate::checkpoint::{read_artifact, Manifest};
use crate::encoder::{EncodeOptions, Model, TokenBatch};
use crate::error::{Error, Result};
use crate::numcore::{clip_grad_norm, AdamConfig, AdamState, Binder, Tape, Var};
use crate::objectives::{
    apply_masking, mlm_loss, ortho_loss, seq_cls_loss, tagging_loss, MaskingPolicy,
    OrthoOptions,
};
use crate::synthlang::{Target, TaskKind, CLS};

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub phase: Phase,
    /// Run the orthogonality optimizer on the phase's adapter slot.
    pub ortho: bool,
    pub main_lr: f64,
    pub ortho_lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Main-loss steps per orthogonality step.
    pub alternation: usize,
    pub seed: u64,
    /// Replace alternation by the joint loss `main + λ·ortho` (ablation only).
    pub joint_lambda: Option<f64>,
    pub ortho_options: OrthoOptions,
    /// Treat the slot input as a constant in the orthogonality pass.
    pub ortho_stop_grad: bool,
    pub tagging_sum_reduction: bool,
    pub mask_fraction: f64,
}

impl PhaseConfig {
    pub fn new(phase: Phase) -> Self {
        PhaseConfig {
            phase,
            ortho: false,
            main_lr: 1e-3,
            ortho_lr: 1e-4,
            steps: 300,
            batch_size: 16,
            clip_norm: 1.0,
            alternation: 1,
            seed: 0,
            joint_lambda: None,
            ortho_options: OrthoOptions::default(),
            ortho_stop_grad: true,
            tagging_sum_reduction: false,
            mask_fraction: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.alternation == 0 {
            return Err(Error::Config("steps, batch size and alternation must be positive".into()));
        }
        if !(self.main_lr > 0.0 && self.ortho_lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning rates and clip norm must be positive".into()));
        }
        if self.phase == Phase::FullFinetune && (self.ortho || self.joint_lambda.is_some()) {
            return Err(Error::Config("full fine-tuning has no adapter slot for the orthogonality loss".into()));
        }
        if self.joint_lambda.is_some() && !self.ortho {
            return Err(Error::Config("joint_lambda requires ortho to be enabled".into()));
        }
        Ok(())
    }

    /// The slot whose parameters this phase trains, if any.
    pub fn target_slot(&self) -> Option<AdapterKind> {
        match self.phase {
            Phase::LangAdapterTraining => Some(AdapterKind::Language),
            Phase::TaskAdapterTraining | Phase::TaskOnlyAdapterTraining => Some(AdapterKind::Task),
            Phase::FullFinetune => None,
        }
    }

    pub fn to_manifest(&self, prefix: &str) -> Manifest {
        let mut m = Manifest::new();
        let mut set = |k: &str, v: String| m.set(format!("{prefix}{k}"), v);
        set("phase", self.phase.to_string());
        set("ortho", self.ortho.to_string());
        set("main_lr", self.main_lr.to_string());
        set("ortho_lr", self.ortho_lr.to_string());
        set("steps", self.steps.to_string());
        set("batch_size", self.batch_size.to_string());
        set("clip_norm", self.clip_norm.to_string());
        set("alternation", self.alternation.to_string());
        set("seed", self.seed.to_string());
        set(
            "joint_lambda",
            self.joint_lambda.map_or_else(|| "off".to_string(), |l| l.to_string()),
        );
        set("ortho_include_padding", self.ortho_options.include_padding.to_string());
        set("ortho_exclude_residual", self.ortho_options.exclude_residual.to_string());
        set("ortho_stop_grad", self.ortho_stop_grad.to_string());
        set("tagging_sum_reduction", self.tagging_sum_reduction.to_string());
        set("mask_fraction", self.mask_fraction.to_string());
        m
    }
}

/// Training data for one phase.
#[derive(Debug, Clone, Copy)]
pub enum PhaseData<'a> {
    /// Raw sentences; `[CLS]` is prepended and MLM corruption applied per batch.
    Mlm(&'a [Vec<u32>]),
    /// Model-ready inputs with their targets.
    Task(TaskKind, &'a [(Vec<u32>, Target)]),
}

impl PhaseData<'_> {
    fn len(&self) -> usize {
        match self {
            PhaseData::Mlm(s) => s.len(),
            PhaseData::Task(_, e) => e.len(),
        }
    }

    pub fn loss_id(&self) -> &'static str {
        match self {
            PhaseData::Mlm(_) => "mlm",
            PhaseData::Task(kind, _) => kind.id(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub phase: Phase,
    pub loss_id: String,
    pub loss: f64,
    pub cos2: Option<Vec<f64>>,
    pub grad_norm: f64,
    pub batch_hash: String,
}

/// One row per optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "step\tphase\tloss_id\tloss\tcos2_per_layer\tgrad_norm\tbatch_hash";

impl MetricsLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let cos2 = r.cos2.as_ref().map_or_else(
                || "-".to_string(),
                |v| v.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            );
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.step, r.phase, r.loss_id, r.loss, cos2, r.grad_norm, r.batch_hash
            );
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    /// Losses of rows with the given loss id, in order.
    pub fn losses(&self, loss_id: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.loss_id == loss_id)
            .map(|r| r.loss)
            .collect()
    }

    /// Mean loss over the first and the last `window` rows with `loss_id`.
    pub fn loss_ends(&self, loss_id: &str, window: usize) -> Option<(f64, f64)> {
        let l = self.losses(loss_id);
        if l.is_empty() {
            return None;
        }
        let w = window.clamp(1, l.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&l[..w]), mean(&l[l.len() - w..])))
    }
}

/// Everything needed to reproduce a run, written before step 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub phases: Vec<String>,
    pub checkpoints: Vec<PathBuf>,
    pub metrics_log: PathBuf,
    pub extra: Manifest,
}

impl RunManifest {
    pub fn to_manifest(&self) -> Manifest {
        let join = |it: Vec<String>| it.join(",");
        let mut m = Manifest::new();
        m.set("config_hash", &self.config_hash);
        m.set("seeds", join(self.seeds.iter().map(u64::to_string).collect()));
        m.set("phases", join(self.phases.clone()));
        m.set(
            "checkpoints",
            join(self.checkpoints.iter().map(|p| p.display().to_string()).collect()),
        );
        m.set("metrics_log", self.metrics_log.display());
        m.extend(&self.extra);
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        self.to_manifest().save(path)
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let m = Manifest::from_text(&read_artifact(path)?)?;
        let split = |k: &str| -> Result<Vec<String>> {
            Ok(m.get(k)?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect())
        };
        let seeds = split("seeds")?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Checkpoint(format!("bad seed `{s}`"))))
            .collect::<Result<_>>()?;
        let mut extra = Manifest::new();
        for (k, v) in m.iter() {
            if !["config_hash", "seeds", "phases", "checkpoints", "metrics_log"].contains(&k) {
                extra.set(k, v);
            }
        }
        Ok(RunManifest {
            config_hash: m.get("config_hash")?.to_string(),
            seeds,
            phases: split("phases")?,
            checkpoints: split("checkpoints")?.into_iter().map(PathBuf::from).collect(),
            metrics_log: PathBuf::from(m.get("metrics_log")?),
            extra,
        })
    }
}

/// Hex SHA-256 of canonical `key=value` text.
pub fn config_hash(m: &Manifest) -> String {
    let digest = Sha256::digest(m.to_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Index of the candidate with the highest dev metric; ties go to the lowest
/// config hash.
pub fn model_selection(candidates: &[(String, f64)]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Config("model selection needs at least one candidate".into()));
    }
    let mut best = 0;
    for (i, (hash, metric)) in candidates.iter().enumerate().skip(1) {
        let (bh, bm) = &candidates[best];
        if metric > bm || (metric == bm && hash < bh) {
            best = i;
        }
    }
    Ok(best)
}

/// Cycles through a dataset in seeded, per-epoch shuffled order.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchSampler { order, pos: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// A prepared batch: model inputs plus whatever the main loss needs.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub tokens: TokenBatch,
    target: StepTarget,
}

impl StepBatch {
    pub fn hash(&self) -> String {
        format!("{:016x}", self.tokens.fingerprint())
    }
}

#[derive(Debug, Clone)]
enum StepTarget {
    Mlm { rows: Vec<usize>, labels: Vec<Option<usize>> },
    Classes(Vec<usize>),
    Tags(Vec<Option<usize>>),
}

/// Derives an independent 64-bit seed from `seed` and two stream tags.
pub fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn prepare(data: PhaseData<'_>, idx: &[usize], policy: &MaskingPolicy, rng: &mut ChaCha8Rng) -> Result<StepBatch> {
    match data {
        PhaseData::Mlm(sents) => {
            let seqs: Vec<Vec<u32>> = idx
                .iter()
                .map(|&i| std::iter::once(CLS).chain(sents[i].iter().copied()).collect())
                .collect();
            let masked = apply_masking(&seqs, policy, rng);
            let tokens = TokenBatch::from_sequences(&masked.inputs);
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for (b, lab) in masked.labels.iter().enumerate() {
                for (t, l) in lab.iter().enumerate() {
                    if l.is_some() {
                        rows.push(b * tokens.len + t);
                        labels.push(*l);
                    }
                }
            }
            if rows.is_empty() {
                return Err(Error::EmptyLoss);
            }
            Ok(StepBatch {
                tokens,
                target: StepTarget::Mlm { rows, labels },
            })
        }
        PhaseData::Task(kind, examples) => {
            let seqs: Vec<Vec<u32>> = idx.iter().map(|&i| examples[i].0.clone()).collect();
            let tokens = TokenBatch::from_sequences(&seqs);
            let target = match kind {
                TaskKind::SeqCls => StepTarget::Classes(
                    idx.iter()
                        .map(|&i| match &examples[i].1 {
                            Target::Class(c) => Ok(*c),
                            Target::Tags(_) => Err(Error::Structural("tag target in a sequence task".into())),
                        })
                        .collect::<Result<_>>()?,
                ),
                TaskKind::Tagging => {
                    let mut labels = Vec::with_capacity(tokens.rows());
                    for &i in idx {
                        let Target::Tags(tags) = &examples[i].1 else {
                            return Err(Error::Structural("class target in a tagging task".into()));
                        };
                        labels.extend(tags.iter().copied());
                        labels.extend(std::iter::repeat_n(None, tokens.len - tags.len()));
                    }
                    StepTarget::Tags(labels)
                }
            };
            Ok(StepBatch { tokens, target })
        }
    }
}

fn main_loss(
    model: &Model,
    tape: &mut Tape,
    binder: &mut Binder,
    states: Var,
    batch: &StepBatch,
    cfg: &PhaseConfig,
) -> Result<Var> {
    match &batch.target {
        StepTarget::Mlm { rows, labels } => {
            let logits = model.mlm_logits(tape, binder, states, rows)?;
            mlm_loss(tape, logits, labels)
        }
        StepTarget::Classes(labels) => {
            let logits = model.cls_logits(tape, binder, states, &batch.tokens)?;
            seq_cls_loss(tape, logits, labels)
        }
        StepTarget::Tags(labels) => {
            let logits = model.tag_logits(tape, binder, states)?;
            tagging_loss(tape, logits, labels, cfg.tagging_sum_reduction)
        }
    }
}

fn check_finite(step: usize, what: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("{what} = {value}"),
        })
    }
}

/// The two optimizers of a phase; `ortho` is `None` when the loss is off or
/// folded into the main loss.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub main: AdamState,
    pub ortho: Option<AdamState>,
}

/// Step-level driver for one training phase.
pub struct PhaseRunner<'a> {
    data: PhaseData<'a>,
    cfg: &'a PhaseConfig,
    slot: Option<AdapterKind>,
    main_names: Vec<String>,
    ortho_names: Vec<String>,
    pub optimizers: Optimizers,
    policy: MaskingPolicy,
    sampler: BatchSampler,
    mask_rng: ChaCha8Rng,
}

impl<'a> PhaseRunner<'a> {
    /// Validates the configuration, freezes `model` for the phase and builds
    /// the optimizers. The model must already carry the needed slots and head.
    pub fn new(model: &mut Model, data: PhaseData<'a>, cfg: &'a PhaseConfig) -> Result<Self> {
        cfg.validate()?;
        if data.len() == 0 {
            return Err(Error::Config("training data is empty".into()));
        }
        model.set_trainable(cfg.phase)?;
        let slot = cfg.target_slot();
        if cfg.ortho && slot.and_then(|s| model.stack.slot(s)).is_none() {
            return Err(Error::Structural(format!("{} with ortho needs its adapter slot", cfg.phase)));
        }
        // The MLM output layer gets no gradient from a task loss.
        let task = matches!(data, PhaseData::Task(..));
        let main_names: Vec<String> = model
            .params
            .trainable_names()
            .into_iter()
            .filter(|n| !(task && n.starts_with("mlm.")))
            .collect();
        let ortho_names = slot.map(|s| model.adapter_param_names(s)).unwrap_or_default();
        let ortho = if cfg.ortho && cfg.joint_lambda.is_none() {
            Some(AdamState::new(AdamConfig::with_lr(cfg.ortho_lr), &model.params, &ortho_names)?)
        } else {
            None
        };
        Ok(PhaseRunner {
            data,
            cfg,
            slot,
            optimizers: Optimizers {
                main: AdamState::new(AdamConfig::with_lr(cfg.main_lr), &model.params, &main_names)?,
                ortho,
            },
            policy: MaskingPolicy::new(cfg.mask_fraction, [0.8, 0.1, 0.1], model.config.vocab_size)?,
            sampler: BatchSampler::new(data.len(), mix(cfg.seed, 1, 0)),
            mask_rng: ChaCha8Rng::seed_from_u64(mix(cfg.seed, 2, 0)),
            main_names,
            ortho_names,
        })
    }

    pub fn next_batch(&mut self) -> Result<StepBatch> {
        let idx = self.sampler.next(self.cfg.batch_size);
        prepare(self.data, &idx, &self.policy, &mut self.mask_rng)
    }

    /// Main-loss update (joint with the orthogonality loss when configured).
    pub fn main_step(&mut self, model: &mut Model, batch: &StepBatch, step: usize) -> Result<MetricsRow> {
        let cfg = self.cfg;
        model.params.zero_grad();
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let opts = EncodeOptions {
            dropout_seed: Some(mix(cfg.seed, 3, step as u64)),
            detach_slot_input: None,
        };
        let (states, acts) = model.encode(&mut tape, &mut binder, &batch.tokens, opts)?;
        let main = main_loss(model, &mut tape, &mut binder, states, batch, cfg)?;
        let main_value = tape.value(main).item();
        let loss_id = self.data.loss_id();
        check_finite(step, &format!("{loss_id} loss"), main_value)?;
        let (loss, cos2) = match (cfg.joint_lambda, self.slot) {
            (Some(lambda), Some(slot)) => {
                let (ort, report) = ortho_loss(&mut tape, &acts, slot, cfg.ortho_options)?;
                check_finite(step, "ortho loss", report.total)?;
                let scaled = tape.scale(ort, lambda);
                (tape.add(main, scaled)?, Some(report.per_layer))
            }
            _ => (main, None),
        };
        let mut grads = tape.backward(loss)?;
        binder.accumulate(&mut grads, &mut model.params)?;
        let norm = clip_grad_norm(&mut model.params, &self.main_names, cfg.clip_norm)?;
        check_finite(step, "main gradient norm", norm)?;
        self.optimizers.main.step(&mut model.params)?;
        model.params.zero_grad();
        Ok(MetricsRow {
            step,
            phase: cfg.phase,
            loss_id: loss_id.to_string(),
            loss: main_value,
            cos2,
            grad_norm: norm,
            batch_hash: batch.hash(),
        })
    }

    /// Orthogonality update on the same batch with a fresh forward pass;
    /// `None` when the loss is off or this step is skipped by alternation.
    pub fn ortho_step(&mut self, model: &mut Model, batch: &StepBatch, step: usize) -> Result<Option<MetricsRow>> {
        let cfg = self.cfg;
        let (Some(opt), Some(slot)) = (self.optimizers.ortho.as_mut(), self.slot) else {
            return Ok(None);
        };
        if !(step + 1).is_multiple_of(cfg.alternation) {
            return Ok(None);
        }
        model.params.zero_grad();
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let opts = EncodeOptions {
            dropout_seed: Some(mix(cfg.seed, 4, step as u64)),
            detach_slot_input: cfg.ortho_stop_grad.then_some(slot),
        };
        let (_, acts) = model.encode(&mut tape, &mut binder, &batch.tokens, opts)?;
        let (ort, report) = ortho_loss(&mut tape, &acts, slot, cfg.ortho_options)?;
        check_finite(step, "ortho loss", report.total)?;
        let mut grads = tape.backward(ort)?;
        binder.accumulate(&mut grads, &mut model.params)?;
        // Only the slot's adapter weights belong to this optimizer.
        for (name, p) in model.params.iter_mut() {
            if !self.ortho_names.iter().any(|n| n == name) {
                p.grad = None;
            }
        }
        let norm = clip_grad_norm(&mut model.params, &self.ortho_names, cfg.clip_norm)?;
        check_finite(step, "ortho gradient norm", norm)?;
        opt.step(&mut model.params)?;
        model.params.zero_grad();
        Ok(Some(MetricsRow {
            step,
            phase: cfg.phase,
            loss_id: "ortho".into(),
            loss: report.total,
            cos2: Some(report.per_layer),
            grad_norm: norm,
            batch_hash: batch.hash(),
        }))
    }
}

/// Runs one phase on `model` for `cfg.steps` iterations.
pub fn run_phase(model: &mut Model, data: PhaseData<'_>, cfg: &PhaseConfig) -> Result<(MetricsLog, Optimizers)> {
    let mut runner = PhaseRunner::new(model, data, cfg)?;
    let mut log = MetricsLog::default();
    for step in 0..cfg.steps {
        let batch = runner.next_batch()?;
        log.rows.push(runner.main_step(model, &batch, step)?);
        if let Some(row) = runner.ortho_step(model, &batch, step)? {
            log.rows.push(row);
        }
    }
    Ok((log, runner.optimizers))
}

/// Fig. 1a: MLM on one language's corpus, training only the language slot.
pub fn train_language_adapter(model: &mut Model, corpus: &[Vec<u32>], cfg: &PhaseConfig) -> Result<MetricsLog> {
    if cfg.phase != Phase::LangAdapterTraining {
        return Err(Error::Config(format!("expected lang_adapter_training, got {}", cfg.phase)));
    }
    run_phase(model, PhaseData::Mlm(corpus), cfg).map(|(log, _)| log)
}

/// Fig. 1b: task loss on source data, training the task slot and head on
/// top of the frozen backbone (and frozen language slot, if present).
pub fn train_task_adapter(
    model: &mut Model,
    kind: TaskKind,
    examples: &[(Vec<u32>, Target)],
    cfg: &PhaseConfig,
) -> Result<MetricsLog> {
    let expected = if model.stack.lang.is_some() {
        Phase::TaskAdapterTraining
    } else {
        Phase::TaskOnlyAdapterTraining
    };
    if cfg.phase != expected {
        return Err(Error::Config(format!("expected {expected} for this stack, got {}", cfg.phase)));
    }
    run_phase(model, PhaseData::Task(kind, examples), cfg).map(|(log, _)| log)
}

/// Full fine-tuning of every parameter on the task (no adapters).
pub fn train_full_finetune(
    model: &mut Model,
    kind: TaskKind,
    examples: &[(Vec<u32>, Target)],
    cfg: &PhaseConfig,
) -> Result<MetricsLog> {
    if !model.stack.is_empty() {
        return Err(Error::Structural("full fine-tuning runs without adapters".into()));
    }
    if cfg.phase != Phase::FullFinetune {
        return Err(Error::Config(format!("expected full_finetune, got {}", cfg.phase)));
    }
    run_phase(model, PhaseData::Task(kind, examples), cfg).map(|(log, _)| log)
}

/// MLM pretraining of the whole backbone on the multilingual mix.
pub fn pretrain_backbone(model: &mut Model, corpus: &[Vec<u32>], cfg: &PhaseConfig) -> Result<MetricsLog> {
    if !model.stack.is_empty() || model.head.is_some() {
        return Err(Error::Structural("backbone pretraining expects a bare encoder".into()));
    }
    if cfg.phase != Phase::FullFinetune {
        return Err(Error::Config(format!("expected full_finetune, got {}", cfg.phase)));
    }
    run_phase(model, PhaseData::Mlm(corpus), cfg).map(|(log, _)| log)
}

#[cfg(test)]
mod tests;
