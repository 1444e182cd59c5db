//! The experiment matrix: per seed, one pretrained backbone, one language
//! adapter per (language, ortho flag), and one task model per
//! (task, variant), each evaluated zero-shot on every language.
//!
//! Layout under the output root:
//!
//! ```text
//! config.txt                       canonical experiment config
//! ledger.tsv                       one line per finished cell (resume)
//! reports.tsv                      per-seed rows, plus AVGz
//! results.<task>.{csv,md}          seed-mean tables
//! seed-<s>/backbone.ckpt           + backbone.metrics.tsv
//! seed-<s>/lang-<noo|ort>.<code>.adapter   + .metrics.tsv
//! seed-<s>/<task>/<variant>.ckpt   + .metrics.tsv, .manifest
//! ```
//!
//! Every artifact is written once and reused on resume; a cell whose
//! checkpoint exists is re-evaluated without training.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use super::config::ExperimentConfig;
use super::eval::{avg_z, evaluate_swapped, EvalReport};
use super::metrics::evaluate_dataset;
use super::table::ResultsTable;
use super::variants::{lang_phase, Variant, VariantSpec};
use crate::adapters::{AdapterKind, AdapterWeights};
use crate::checkpoint::{read_artifact, Manifest};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::synthlang::{fnv1a, Bed, TaskKind};
use crate::training::{
    mix, model_selection, pretrain_backbone, train_full_finetune, train_language_adapter, train_task_adapter,
    MetricsLog, PhaseConfig, RunManifest,
};

fn ortho_tag(ortho: bool) -> &'static str {
    if ortho {
        "ort"
    } else {
        "noo"
    }
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

pub fn backbone_path(root: &Path, seed: u64) -> PathBuf {
    seed_dir(root, seed).join("backbone.ckpt")
}

pub fn lang_adapter_path(root: &Path, seed: u64, ortho: bool, code: &str) -> PathBuf {
    seed_dir(root, seed).join(format!("lang-{}.{code}.adapter", ortho_tag(ortho)))
}

pub fn cell_path(root: &Path, seed: u64, task: TaskKind, variant: Variant) -> PathBuf {
    seed_dir(root, seed).join(task.id()).join(format!("{variant}.ckpt"))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.with_extension("").into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Shared training steps counter, so callers can verify resume.
#[derive(Debug, Default)]
pub struct StepCounter(AtomicUsize);

impl StepCounter {
    fn add(&self, log: &MetricsLog) {
        let steps = log.rows.iter().map(|r| r.step + 1).max().unwrap_or(0);
        self.0.fetch_add(steps, Ordering::Relaxed);
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

/// Builds and MLM-pretrains a backbone for `seed`.
pub fn train_backbone(cfg: &ExperimentConfig, bed: &Bed, seed: u64) -> Result<(Model, MetricsLog)> {
    let mut model = Model::new(cfg.model.clone(), mix(seed, 1, 0))?;
    let phase = PhaseConfig {
        seed: mix(seed, 2, 0),
        ..cfg.pretrain.clone()
    };
    let log = pretrain_backbone(&mut model, &bed.pretrain, &phase)?;
    Ok((model, log))
}

/// Trains the language adapter of `code` on its monolingual corpus on top of
/// the frozen `backbone`.
pub fn train_lang_adapter(
    cfg: &ExperimentConfig,
    bed: &Bed,
    backbone: &Model,
    code: &str,
    ortho: bool,
    seed: u64,
) -> Result<(AdapterWeights, MetricsLog)> {
    let corpus = bed.adapter_corpus(code)?;
    let stream = fnv1a(code);
    let mut model = backbone.clone();
    model.add_fresh_adapter(cfg.lang_adapter().orthogonal(ortho), mix(seed, 11, stream))?;
    let base = lang_phase(cfg, ortho, seed);
    let phase = PhaseConfig {
        seed: mix(base.seed, 12, stream),
        ..base
    };
    let log = train_language_adapter(&mut model, &corpus, &phase)?;
    Ok((model.extract_adapter(AdapterKind::Language)?, log))
}

/// A trained task model plus its selection record.
#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub model: Model,
    pub log: MetricsLog,
    pub lr: f64,
    pub dev: f64,
}

/// Trains `variant` on the source-language `task` data; with an LR grid the
/// source dev set selects among candidates (test data is never consulted).
#[allow(clippy::too_many_arguments)]
pub fn train_variant(
    cfg: &ExperimentConfig,
    bed: &Bed,
    backbone: &Model,
    source_adapter: Option<&AdapterWeights>,
    task: TaskKind,
    variant: Variant,
    seed: u64,
    mode: ExecMode,
) -> Result<TrainedCell> {
    let spec = VariantSpec::resolve(variant, cfg, seed);
    spec.validate()?;
    let splits = bed.task(task);
    let train = splits.train.model_inputs();
    let mut candidates: Vec<TrainedCell> = Vec::new();
    for lr in cfg.task_lrs() {
        let mut model = backbone.clone();
        match (&spec.lang, source_adapter) {
            (Some((config, _)), Some(w)) => {
                if w.config.orthogonal != config.orthogonal {
                    return Err(Error::Config(format!("{variant}: language adapter ortho flag mismatch")));
                }
                model.insert_adapter(w)?;
            }
            (Some(_), None) => return Err(Error::MissingAdapter(variant.to_string())),
            (None, Some(_)) => return Err(Error::Structural(format!("`{variant}` takes no language adapter"))),
            (None, None) => {}
        }
        if let Some(a) = spec.task_adapter {
            model.add_fresh_adapter(a, mix(seed, 21, 0))?;
        }
        model.set_head(task, splits.train.num_labels, mix(seed, 22, 0))?;
        let phase = PhaseConfig {
            main_lr: lr,
            ..spec.task.clone()
        };
        let log = if spec.task_adapter.is_some() {
            train_task_adapter(&mut model, task, &train, &phase)?
        } else {
            train_full_finetune(&mut model, task, &train, &phase)?
        };
        let dev = evaluate_dataset(&model, &splits.dev, cfg.eval_batch_size, mode)?;
        candidates.push(TrainedCell { model, log, lr, dev });
    }
    let keys: Vec<(String, f64)> = candidates.iter().map(|c| (format!("lr={:e}", c.lr), c.dev)).collect();
    let best = model_selection(&keys)?;
    Ok(candidates.swap_remove(best))
}

/// Status of one `(seed, task, variant)` cell in the ledger.
#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    /// Metric per language, in configuration order.
    Done(Vec<(String, f64)>),
    Failed(String),
}

pub type CellKey = (u64, TaskKind, Variant);

/// Append-only record of finished cells. Later lines override earlier ones,
/// so a failed cell that succeeds on resume is superseded.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    pub cells: BTreeMap<CellKey, CellStatus>,
}

impl Ledger {
    pub fn line(key: CellKey, status: &CellStatus) -> String {
        let (seed, task, variant) = key;
        match status {
            CellStatus::Done(values) => {
                // `{}` on f64 prints the shortest representation that parses
                // back to the same bits.
                let cells: Vec<String> = values.iter().map(|(l, v)| format!("{l}={v}")).collect();
                format!("{seed}\t{task}\t{variant}\tok\t{}\n", cells.join(";"))
            }
            CellStatus::Failed(msg) => {
                let msg = msg.replace(['\t', '\n'], " ");
                format!("{seed}\t{task}\t{variant}\tfailed\t{msg}\n")
            }
        }
    }

    pub fn load(path: &Path) -> Result<Ledger> {
        let mut ledger = Ledger::default();
        if !path.exists() {
            return Ok(ledger);
        }
        let text = read_artifact(path)?;
        for (i, line) in text.lines().enumerate() {
            let err = |msg: &str| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: msg.into(),
            };
            let f: Vec<&str> = line.splitn(5, '\t').collect();
            if f.len() != 5 {
                return Err(err("expected 5 tab-separated fields"));
            }
            let seed = f[0].parse().map_err(|_| err("bad seed"))?;
            let key = (seed, f[1].parse()?, f[2].parse()?);
            let status = match f[3] {
                "ok" => CellStatus::Done(
                    f[4].split(';')
                        .map(|kv| {
                            let (l, v) = kv.split_once('=').ok_or_else(|| err("bad cell value"))?;
                            Ok((l.to_string(), v.parse().map_err(|_| err("bad cell value"))?))
                        })
                        .collect::<Result<_>>()?,
                ),
                "failed" => CellStatus::Failed(f[4].to_string()),
                _ => return Err(err("status must be ok or failed")),
            };
            ledger.cells.insert(key, status);
        }
        Ok(ledger)
    }

    pub fn append(&mut self, path: &Path, key: CellKey, status: CellStatus) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        // One write per line keeps appends line-atomic.
        f.write_all(Self::line(key, &status).as_bytes())?;
        self.cells.insert(key, status);
        Ok(())
    }

    pub fn is_done(&self, key: &CellKey) -> bool {
        matches!(self.cells.get(key), Some(CellStatus::Done(_)))
    }
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    /// Per-seed, per-language reports of finished cells (AVGz excluded).
    pub reports: Vec<EvalReport>,
    pub tables: Vec<ResultsTable>,
    /// Training steps executed by this invocation (0 on a complete resume).
    pub steps_executed: usize,
    pub failures: Vec<(CellKey, String)>,
}

/// Artifact-level steps shared by the matrix and the CLI: each step loads
/// its artifact if present, otherwise trains and writes it.
pub struct Pipeline<'a> {
    cfg: &'a ExperimentConfig,
    bed: &'a Bed,
    root: &'a Path,
    mode: ExecMode,
    hash: String,
    steps: StepCounter,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a ExperimentConfig, bed: &'a Bed, root: &'a Path, mode: ExecMode) -> Self {
        Pipeline {
            cfg,
            bed,
            root,
            mode,
            hash: cfg.hash(),
            steps: StepCounter::default(),
        }
    }

    /// Training steps executed so far.
    pub fn steps(&self) -> usize {
        self.steps.get()
    }

    pub fn backbone(&self, seed: u64) -> Result<Model> {
        let path = backbone_path(self.root, seed);
        if path.exists() {
            return Ok(Model::load(&path)?.0);
        }
        log::info!("seed {seed}: pretraining backbone");
        let (model, log) = train_backbone(self.cfg, self.bed, seed)?;
        self.steps.add(&log);
        log.write(&sibling(&path, ".metrics.tsv"))?;
        let mut extra = Manifest::new();
        extra.set("config_hash", &self.hash);
        extra.set("seed", seed);
        extra.extend(&self.cfg.pretrain.to_manifest("pretrain."));
        model.save(&path, &extra)?;
        Ok(model)
    }

    pub fn lang_adapter(&self, backbone: &Model, seed: u64, ortho: bool, code: &str) -> Result<AdapterWeights> {
        let path = lang_adapter_path(self.root, seed, ortho, code);
        if path.exists() {
            return Ok(AdapterWeights::load(&path)?.0);
        }
        log::info!("seed {seed}: training {} language adapter for {code}", ortho_tag(ortho));
        let (w, log) = train_lang_adapter(self.cfg, self.bed, backbone, code, ortho, seed)?;
        self.steps.add(&log);
        log.write(&sibling(&path, ".metrics.tsv"))?;
        let mut extra = Manifest::new();
        extra.set("config_hash", &self.hash);
        extra.set("seed", seed);
        extra.set("language", code);
        extra.extend(&lang_phase(self.cfg, ortho, seed).to_manifest("lang."));
        w.save(&path, &extra)?;
        Ok(w)
    }

    /// The trained model of one cell, with the source-language adapter (if
    /// any) in its language slot.
    pub fn task_model(
        &self,
        backbone: &Model,
        source_adapter: Option<&AdapterWeights>,
        (seed, task, variant): CellKey,
    ) -> Result<Model> {
        let path = cell_path(self.root, seed, task, variant);
        if path.exists() {
            return Ok(Model::load(&path)?.0);
        }
        log::info!("seed {seed}: training {variant} on {task}");
        let cell = train_variant(self.cfg, self.bed, backbone, source_adapter, task, variant, seed, self.mode)?;
        self.steps.add(&cell.log);
        let rel = |p: &Path| p.strip_prefix(self.root).unwrap_or(p).to_path_buf();
        let metrics = sibling(&path, ".metrics.tsv");
        cell.log.write(&metrics)?;
        let spec = VariantSpec::resolve(variant, self.cfg, seed);
        let mut extra = Manifest::new();
        extra.set("variant", variant);
        extra.set("task", task);
        extra.set("seed", seed);
        extra.set("selected_lr", cell.lr);
        extra.set("dev_metric", cell.dev);
        let mut checkpoints = vec![rel(&backbone_path(self.root, seed))];
        let mut phases = vec![self.cfg.pretrain.phase.to_string()];
        if let Some((_, lang)) = &spec.lang {
            checkpoints.push(rel(&lang_adapter_path(self.root, seed, lang.ortho, self.cfg.source_code())));
            phases.push(lang.phase.to_string());
            extra.extend(&lang.to_manifest("lang."));
        }
        checkpoints.push(rel(&path));
        phases.push(spec.task.phase.to_string());
        extra.extend(&PhaseConfig { main_lr: cell.lr, ..spec.task }.to_manifest("task."));
        RunManifest {
            config_hash: self.hash.clone(),
            seeds: vec![seed],
            phases,
            checkpoints,
            metrics_log: rel(&metrics),
            extra: extra.clone(),
        }
        .save(&sibling(&path, ".manifest"))?;
        extra.set("config_hash", &self.hash);
        // Saved last: an existing checkpoint marks a trained cell.
        cell.model.save(&path, &extra)?;
        Ok(cell.model)
    }

    fn cell(
        &self,
        backbone: &Model,
        adapters: &BTreeMap<(bool, String), std::result::Result<AdapterWeights, String>>,
        key: CellKey,
    ) -> Result<Vec<(String, f64)>> {
        let (_, task, variant) = key;
        let adapter = |ortho: bool, code: &str| -> Result<&AdapterWeights> {
            match adapters.get(&(ortho, code.to_string())) {
                Some(Ok(w)) => Ok(w),
                Some(Err(msg)) => Err(Error::Structural(format!("language adapter {code}: {msg}"))),
                None => Err(Error::MissingAdapter(variant.to_string())),
            }
        };
        let source_adapter = variant
            .lang_ortho()
            .map(|o| adapter(o, self.cfg.source_code()))
            .transpose()?;
        let model = self.task_model(backbone, source_adapter, key)?;
        let splits = self.bed.task(task);
        self.cfg
            .language_codes()
            .into_iter()
            .map(|code| {
                let test = splits
                    .test
                    .get(&code)
                    .ok_or_else(|| Error::Config(format!("no test split for `{code}`")))?;
                let target = variant.lang_ortho().map(|o| adapter(o, &code)).transpose()?;
                let value = evaluate_swapped(&model, target, test, self.cfg.eval_batch_size, self.mode, variant.id())?;
                Ok((code, value))
            })
            .collect()
    }

    fn run_seed(&self, seed: u64, ledger: &mut Ledger, ledger_path: &Path) -> Result<Vec<(CellKey, String)>> {
        let pending: Vec<CellKey> = self
            .cfg
            .tasks
            .iter()
            .flat_map(|&t| self.cfg.variants.iter().map(move |&v| (seed, t, v)))
            .filter(|k| !ledger.is_done(k))
            .collect();
        if pending.is_empty() {
            return Ok(Vec::new());
        }
        let mut failures = Vec::new();
        let backbone = match self.backbone(seed) {
            Ok(b) => b,
            Err(e) => {
                for &key in &pending {
                    let msg = format!("backbone: {e}");
                    ledger.append(ledger_path, key, CellStatus::Failed(msg.clone()))?;
                    failures.push((key, msg));
                }
                return Ok(failures);
            }
        };
        let mut needed: Vec<(bool, String)> = pending
            .iter()
            .filter_map(|(_, _, v)| v.lang_ortho())
            .flat_map(|o| self.cfg.language_codes().into_iter().map(move |c| (o, c)))
            .collect();
        needed.sort();
        needed.dedup();
        let trained = exec::map(self.mode, &needed, |(o, code)| {
            self.lang_adapter(&backbone, seed, *o, code).map_err(|e| e.to_string())
        });
        let adapters: BTreeMap<_, _> = needed.into_iter().zip(trained).collect();
        let results = exec::map(self.mode, &pending, |&key| self.cell(&backbone, &adapters, key));
        for (key, result) in pending.into_iter().zip(results) {
            let status = match result {
                Ok(values) => CellStatus::Done(values),
                Err(e) => {
                    log::warn!("cell {key:?} failed: {e}");
                    failures.push((key, e.to_string()));
                    CellStatus::Failed(e.to_string())
                }
            };
            ledger.append(ledger_path, key, status)?;
        }
        Ok(failures)
    }
}

/// Runs (or resumes) the full matrix under `root`, then writes reports and
/// tables. Cell failures are recorded and reported, not fatal.
pub fn run_variant_matrix(cfg: &ExperimentConfig, root: &Path, mode: ExecMode) -> Result<MatrixOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(root)?;
    let config_path = root.join("config.txt");
    let text = cfg.to_text();
    if config_path.exists() {
        if read_artifact(&config_path)? != text {
            return Err(Error::Config(format!(
                "{} holds a different experiment; use a fresh output directory",
                root.display()
            )));
        }
    } else {
        std::fs::write(&config_path, &text)?;
    }
    let bed = Bed::generate(&cfg.bed)?;
    let runner = Pipeline::new(cfg, &bed, root, mode);
    let ledger_path = root.join("ledger.tsv");
    let mut ledger = Ledger::load(&ledger_path)?;
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        failures.extend(runner.run_seed(seed, &mut ledger, &ledger_path)?);
    }

    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        for &task in &cfg.tasks {
            for &variant in &cfg.variants {
                if let Some(CellStatus::Done(values)) = ledger.cells.get(&(seed, task, variant)) {
                    reports.extend(values.iter().map(|(language, value)| EvalReport {
                        variant: variant.to_string(),
                        task,
                        language: language.clone(),
                        metric: task.metric_name().to_string(),
                        value: *value,
                        seed,
                    }));
                }
            }
        }
    }
    let mut out = String::from("seed\tvariant\ttask\tlanguage\tvalue\n");
    for r in reports.iter().chain(&avg_z(&reports, cfg.source_code())) {
        let _ = writeln!(out, "{}\t{}", r.seed, r.row());
    }
    std::fs::write(root.join("reports.tsv"), out)?;

    let variants: Vec<String> = cfg.variants.iter().map(Variant::to_string).collect();
    let languages = cfg.language_codes();
    let tables: Vec<ResultsTable> = cfg
        .tasks
        .iter()
        .map(|&task| ResultsTable::from_reports(task, &reports, &variants, &languages, cfg.source_code()))
        .collect();
    for t in &tables {
        t.write(root)?;
    }
    Ok(MatrixOutcome {
        reports,
        tables,
        steps_executed: runner.steps(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalcli::AVG_Z;

    #[test]
    fn ledger_lines_round_trip_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.tsv");
        let mut ledger = Ledger::default();
        let v = 0.1 + 0.2;
        let key = (3, TaskKind::Tagging, Variant::LOrtTNoo);
        ledger
            .append(&path, key, CellStatus::Done(vec![("src".into(), v), ("tgt".into(), 1.0 / 3.0)]))
            .unwrap();
        let key2 = (3, TaskKind::SeqCls, Variant::FullFt);
        ledger.append(&path, key2, CellStatus::Failed("bad\tthing".into())).unwrap();
        let back = Ledger::load(&path).unwrap();
        assert_eq!(back.cells, ledger.cells.clone().into_iter().map(|(k, s)| match s {
            CellStatus::Failed(m) => (k, CellStatus::Failed(m.replace('\t', " "))),
            s => (k, s),
        }).collect());
        assert!(back.is_done(&key));
        assert!(!back.is_done(&key2));
        match &back.cells[&key] {
            CellStatus::Done(values) => assert_eq!(values[0].1.to_bits(), v.to_bits()),
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn later_lines_supersede() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.tsv");
        let mut ledger = Ledger::default();
        let key = (1, TaskKind::SeqCls, Variant::TNoo);
        ledger.append(&path, key, CellStatus::Failed("x".into())).unwrap();
        ledger.append(&path, key, CellStatus::Done(vec![("src".into(), 0.5)])).unwrap();
        assert!(Ledger::load(&path).unwrap().is_done(&key));
    }

    fn degenerate_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            bed: crate::synthlang::BedConfig {
                mono_sentences: 200,
                task_sentences: 300,
                seq_train: 90,
                seq_eval: 30,
                targets: Vec::new(),
                ..Default::default()
            },
            tasks: vec![TaskKind::Tagging],
            variants: vec![Variant::LNooTNoo],
            seeds: vec![5],
            ..ExperimentConfig::default()
        };
        cfg.model.vocab_size = cfg.bed.vocab_size();
        for phase in [&mut cfg.pretrain, &mut cfg.lang, &mut cfg.task, &mut cfg.full_ft] {
            phase.steps = 5;
            phase.batch_size = 4;
        }
        cfg
    }

    #[test]
    fn one_by_one_matrix_and_resume() {
        let cfg = degenerate_config();
        let dir = tempfile::tempdir().unwrap();
        let first = run_variant_matrix(&cfg, dir.path(), ExecMode::Sequential).unwrap();
        assert_eq!(first.steps_executed, 15);
        assert!(first.failures.is_empty());
        let table = &first.tables[0];
        assert_eq!(table.columns, vec!["src".to_string(), AVG_Z.to_string()]);
        // No zero-shot language: the AVGz cell is empty.
        assert!(table.value("l-noo+t-noo", "src").is_some());
        assert_eq!(table.value("l-noo+t-noo", AVG_Z), None);

        let again = run_variant_matrix(&cfg, dir.path(), ExecMode::Sequential).unwrap();
        assert_eq!(again.steps_executed, 0);
        assert_eq!(again.reports, first.reports);

        let changed = ExperimentConfig {
            seeds: vec![6],
            ..cfg
        };
        assert!(matches!(run_variant_matrix(&changed, dir.path(), ExecMode::Sequential), Err(Error::Config(_))));
    }
}
