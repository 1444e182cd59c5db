//! Experiment configuration: a `key = value` file with `[section]` headers.
//!
//! The file must declare `schema_version = 1` before any section; every key
//! is optional and overrides the built-in default; unknown sections or keys
//! are errors. [`ExperimentConfig::to_text`] emits the canonical form, which
//! parses back to the same configuration and is what the config hash covers.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use super::variants::Variant;
use crate::adapters::{AdapterConfig, Phase};
use crate::checkpoint::{read_artifact, Manifest};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::objectives::OrthoOptions;
use crate::synthlang::{BedConfig, LanguageSpec, TaskKind};
use crate::training::{config_hash, PhaseConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub bed: BedConfig,
    /// `vocab_size` is always derived from the bed.
    pub model: EncoderConfig,
    pub lang_bottleneck: usize,
    pub task_bottleneck: usize,
    pub adapter_residual: bool,
    pub pretrain: PhaseConfig,
    pub lang: PhaseConfig,
    /// Shared by every adapter-based task variant; the phase id is set per variant.
    pub task: PhaseConfig,
    /// Task learning rates tried per cell; the source dev set picks one.
    pub task_lr_grid: Vec<f64>,
    pub full_ft: PhaseConfig,
    pub tasks: Vec<TaskKind>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub eval_batch_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let bed = BedConfig::default();
        let model = EncoderConfig {
            vocab_size: bed.vocab_size(),
            ..EncoderConfig::default()
        };
        ExperimentConfig {
            model,
            bed,
            lang_bottleneck: AdapterConfig::language().bottleneck,
            // Wider than the per-layer default: the sequence task compares
            // segment lengths, which a 4-wide bottleneck cannot resolve.
            task_bottleneck: 16,
            adapter_residual: true,
            pretrain: PhaseConfig {
                steps: 3000,
                batch_size: 32,
                main_lr: 2e-3,
                ..PhaseConfig::new(Phase::FullFinetune)
            },
            lang: PhaseConfig {
                steps: 1000,
                batch_size: 32,
                main_lr: 2e-3,
                ..PhaseConfig::new(Phase::LangAdapterTraining)
            },
            task: PhaseConfig {
                steps: 1000,
                batch_size: 32,
                main_lr: 5e-3,
                ..PhaseConfig::new(Phase::TaskAdapterTraining)
            },
            task_lr_grid: Vec::new(),
            full_ft: PhaseConfig {
                steps: 600,
                batch_size: 32,
                main_lr: 1e-3,
                ..PhaseConfig::new(Phase::FullFinetune)
            },
            tasks: vec![TaskKind::SeqCls, TaskKind::Tagging],
            variants: Variant::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            eval_batch_size: 64,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        path: "<config>".into(),
        line,
        msg: format!("cannot parse `{value}` for `{key}`"),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s, line))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Applies a phase key; `Ok(false)` when the key is not a phase key.
fn set_phase_key(p: &mut PhaseConfig, key: &str, value: &str, line: usize) -> Result<bool> {
    match key {
        "steps" => p.steps = parse_value(key, value, line)?,
        "batch_size" => p.batch_size = parse_value(key, value, line)?,
        "lr" => p.main_lr = parse_value(key, value, line)?,
        "ortho_lr" => p.ortho_lr = parse_value(key, value, line)?,
        "clip_norm" => p.clip_norm = parse_value(key, value, line)?,
        "alternation" => p.alternation = parse_value(key, value, line)?,
        "joint_lambda" => {
            p.joint_lambda = match value {
                "off" => None,
                v => Some(parse_value(key, v, line)?),
            }
        }
        "mask_fraction" => p.mask_fraction = parse_value(key, value, line)?,
        "ortho_include_padding" => p.ortho_options.include_padding = parse_value(key, value, line)?,
        "ortho_exclude_residual" => p.ortho_options.exclude_residual = parse_value(key, value, line)?,
        "ortho_stop_grad" => p.ortho_stop_grad = parse_value(key, value, line)?,
        "tagging_sum_reduction" => p.tagging_sum_reduction = parse_value(key, value, line)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn write_phase(out: &mut String, name: &str, p: &PhaseConfig, mlm: bool) {
    let _ = writeln!(out, "\n[{name}]");
    let _ = writeln!(out, "steps = {}", p.steps);
    let _ = writeln!(out, "batch_size = {}", p.batch_size);
    let _ = writeln!(out, "lr = {}", p.main_lr);
    let _ = writeln!(out, "clip_norm = {}", p.clip_norm);
    if mlm {
        let _ = writeln!(out, "mask_fraction = {}", p.mask_fraction);
    }
    if p.phase != Phase::FullFinetune {
        let OrthoOptions {
            include_padding,
            exclude_residual,
        } = p.ortho_options;
        let _ = writeln!(out, "ortho_lr = {}", p.ortho_lr);
        let _ = writeln!(out, "alternation = {}", p.alternation);
        let lambda = p.joint_lambda.map_or_else(|| "off".into(), |l| l.to_string());
        let _ = writeln!(out, "joint_lambda = {lambda}");
        let _ = writeln!(out, "ortho_include_padding = {include_padding}");
        let _ = writeln!(out, "ortho_exclude_residual = {exclude_residual}");
        let _ = writeln!(out, "ortho_stop_grad = {}", p.ortho_stop_grad);
    }
    if !mlm {
        let _ = writeln!(out, "tagging_sum_reduction = {}", p.tagging_sum_reduction);
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_artifact(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        let mut version: Option<u32> = None;
        let mut targets: IndexMap<String, LanguageSpec> = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: "<config>".into(),
                line,
                msg,
            };
            if let Some(name) = text.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("malformed section header `{text}`")))?
                    .trim();
                if version.is_none() {
                    return Err(err("`schema_version` must precede the first section".into()));
                }
                let known = ["bed", "grammar", "source", "model", "adapters", "pretrain", "lang", "task", "full_ft", "matrix"];
                if let Some(code) = name.strip_prefix("target.") {
                    let spec = LanguageSpec {
                        code: code.to_string(),
                        ..LanguageSpec::identity(code)
                    };
                    spec.validate()?;
                    if targets.insert(code.to_string(), spec).is_some() {
                        return Err(err(format!("duplicate section `[{name}]`")));
                    }
                } else if !known.contains(&name) {
                    return Err(err(format!("unknown section `[{name}]`")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = text
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, got `{text}`")))?;
            let unknown = || err(format!("unknown key `{key}` in {}", if section.is_empty() { "top level".to_string() } else { format!("[{section}]") }));
            let b = &mut cfg.bed;
            match section.as_str() {
                "" => match key {
                    "schema_version" => {
                        let v: u32 = parse_value(key, value, line)?;
                        if v != SCHEMA_VERSION {
                            return Err(err(format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})")));
                        }
                        version = Some(v);
                    }
                    _ => return Err(unknown()),
                },
                "bed" => match key {
                    "seed" => b.seed = parse_value(key, value, line)?,
                    "mono_sentences" => b.mono_sentences = parse_value(key, value, line)?,
                    "pretrain_target_share" => b.pretrain_target_share = parse_value(key, value, line)?,
                    "pretrain_pair_share" => b.pretrain_pair_share = parse_value(key, value, line)?,
                    "adapter_pair_share" => b.adapter_pair_share = parse_value(key, value, line)?,
                    "task_sentences" => b.task_sentences = parse_value(key, value, line)?,
                    "seq_train" => b.seq_train = parse_value(key, value, line)?,
                    "seq_eval" => b.seq_eval = parse_value(key, value, line)?,
                    "seq_margin" => b.seq_margin = parse_value(key, value, line)?,
                    "dev_fraction" => b.dev_fraction = parse_value(key, value, line)?,
                    "test_fraction" => b.test_fraction = parse_value(key, value, line)?,
                    _ => return Err(unknown()),
                },
                "grammar" => {
                    let g = &mut b.grammar;
                    match key {
                        "words" => g.words = parse_value(key, value, line)?,
                        "classes" => g.classes = parse_value(key, value, line)?,
                        "min_len" => g.min_len = parse_value(key, value, line)?,
                        "max_len" => g.max_len = parse_value(key, value, line)?,
                        "zipf_exponent" => g.zipf_exponent = parse_value(key, value, line)?,
                        "seed" => g.seed = parse_value(key, value, line)?,
                        _ => return Err(unknown()),
                    }
                }
                "source" => match key {
                    "code" => b.source = LanguageSpec::identity(value),
                    _ => return Err(unknown()),
                },
                "model" => {
                    let m = &mut cfg.model;
                    match key {
                        "layers" => m.layers = parse_value(key, value, line)?,
                        "hidden" => m.hidden = parse_value(key, value, line)?,
                        "heads" => m.heads = parse_value(key, value, line)?,
                        "ffn" => m.ffn = parse_value(key, value, line)?,
                        "max_len" => m.max_len = parse_value(key, value, line)?,
                        "dropout" => m.dropout = parse_value(key, value, line)?,
                        "tied_embeddings" => m.tied_embeddings = parse_value(key, value, line)?,
                        "adapter_pre_norm" => m.adapter_pre_norm = parse_value(key, value, line)?,
                        "ln_eps" => m.ln_eps = parse_value(key, value, line)?,
                        _ => return Err(unknown()),
                    }
                }
                "adapters" => match key {
                    "lang_bottleneck" => cfg.lang_bottleneck = parse_value(key, value, line)?,
                    "task_bottleneck" => cfg.task_bottleneck = parse_value(key, value, line)?,
                    "residual" => cfg.adapter_residual = parse_value(key, value, line)?,
                    _ => return Err(unknown()),
                },
                "pretrain" | "full_ft" => {
                    let p = if section == "pretrain" { &mut cfg.pretrain } else { &mut cfg.full_ft };
                    let allowed = ["steps", "batch_size", "lr", "clip_norm", "mask_fraction", "tagging_sum_reduction"];
                    if !allowed.contains(&key) || !set_phase_key(p, key, value, line)? {
                        return Err(unknown());
                    }
                }
                "lang" => {
                    if key == "tagging_sum_reduction" || !set_phase_key(&mut cfg.lang, key, value, line)? {
                        return Err(unknown());
                    }
                }
                "task" => {
                    if key == "lr_grid" {
                        cfg.task_lr_grid = parse_list(key, value, line)?;
                    } else if key == "mask_fraction" || !set_phase_key(&mut cfg.task, key, value, line)? {
                        return Err(unknown());
                    }
                }
                "matrix" => match key {
                    "tasks" => cfg.tasks = parse_list(key, value, line)?,
                    "variants" => {
                        cfg.variants = if value == "all" {
                            Variant::ALL.to_vec()
                        } else {
                            parse_list(key, value, line)?
                        }
                    }
                    "seeds" => cfg.seeds = parse_list(key, value, line)?,
                    "eval_batch_size" => cfg.eval_batch_size = parse_value(key, value, line)?,
                    _ => return Err(unknown()),
                },
                target => {
                    let code = target.strip_prefix("target.").expect("validated section");
                    let spec = targets.get_mut(code).expect("registered at header");
                    match key {
                        "cipher_seed" => spec.cipher_seed = parse_value(key, value, line)?,
                        "order" => spec.order = value.parse()?,
                        "divergence" => spec.divergence = parse_value(key, value, line)?,
                        _ => return Err(unknown()),
                    }
                }
            }
        }
        if version.is_none() {
            return Err(Error::Config("missing `schema_version`".into()));
        }
        if !targets.is_empty() {
            cfg.bed.targets = targets.into_values().collect();
        }
        cfg.model.vocab_size = cfg.bed.vocab_size();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.bed.validate()?;
        self.model.validate()?;
        for (p, phase) in [
            (&self.pretrain, Phase::FullFinetune),
            (&self.lang, Phase::LangAdapterTraining),
            (&self.full_ft, Phase::FullFinetune),
        ] {
            if p.phase != phase {
                return Err(Error::Config(format!("phase config for {phase} carries {}", p.phase)));
            }
            p.validate()?;
        }
        self.task.validate()?;
        self.lang_adapter().validate(self.model.hidden)?;
        self.task_adapter().validate(self.model.hidden)?;
        if self.task_lr_grid.iter().any(|lr| *lr <= 0.0) {
            return Err(Error::Config("task lr_grid entries must be positive".into()));
        }
        if self.tasks.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("matrix needs at least one task, variant and seed".into()));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Config("eval_batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn lang_adapter(&self) -> AdapterConfig {
        AdapterConfig {
            bottleneck: self.lang_bottleneck,
            residual: self.adapter_residual,
            ..AdapterConfig::language()
        }
    }

    pub fn task_adapter(&self) -> AdapterConfig {
        AdapterConfig {
            bottleneck: self.task_bottleneck,
            residual: self.adapter_residual,
            ..AdapterConfig::task()
        }
    }

    /// Learning rates tried for each task cell.
    pub fn task_lrs(&self) -> Vec<f64> {
        if self.task_lr_grid.is_empty() {
            vec![self.task.main_lr]
        } else {
            self.task_lr_grid.clone()
        }
    }

    /// Canonical text form; parses back to an equal configuration.
    pub fn to_text(&self) -> String {
        let b = &self.bed;
        let g = &b.grammar;
        let m = &self.model;
        let mut out = format!("schema_version = {SCHEMA_VERSION}\n");
        let _ = write!(
            out,
            "\n[bed]\nseed = {}\nmono_sentences = {}\npretrain_target_share = {}\npretrain_pair_share = {}\nadapter_pair_share = {}\ntask_sentences = {}\nseq_train = {}\nseq_eval = {}\nseq_margin = {}\ndev_fraction = {}\ntest_fraction = {}\n",
            b.seed, b.mono_sentences, b.pretrain_target_share, b.pretrain_pair_share, b.adapter_pair_share, b.task_sentences, b.seq_train, b.seq_eval, b.seq_margin, b.dev_fraction, b.test_fraction
        );
        let _ = write!(
            out,
            "\n[grammar]\nwords = {}\nclasses = {}\nmin_len = {}\nmax_len = {}\nzipf_exponent = {}\nseed = {}\n",
            g.words, g.classes, g.min_len, g.max_len, g.zipf_exponent, g.seed
        );
        let _ = write!(out, "\n[source]\ncode = {}\n", b.source.code);
        for t in &b.targets {
            let _ = write!(
                out,
                "\n[target.{}]\ncipher_seed = {}\norder = {}\ndivergence = {}\n",
                t.code, t.cipher_seed, t.order, t.divergence
            );
        }
        let _ = write!(
            out,
            "\n[model]\nlayers = {}\nhidden = {}\nheads = {}\nffn = {}\nmax_len = {}\ndropout = {}\ntied_embeddings = {}\nadapter_pre_norm = {}\nln_eps = {}\n",
            m.layers, m.hidden, m.heads, m.ffn, m.max_len, m.dropout, m.tied_embeddings, m.adapter_pre_norm, m.ln_eps
        );
        let _ = write!(
            out,
            "\n[adapters]\nlang_bottleneck = {}\ntask_bottleneck = {}\nresidual = {}\n",
            self.lang_bottleneck, self.task_bottleneck, self.adapter_residual
        );
        write_phase(&mut out, "pretrain", &self.pretrain, true);
        write_phase(&mut out, "lang", &self.lang, true);
        write_phase(&mut out, "task", &self.task, false);
        let _ = writeln!(out, "lr_grid = {}", join(&self.task_lr_grid));
        write_phase(&mut out, "full_ft", &self.full_ft, false);
        let _ = write!(
            out,
            "\n[matrix]\ntasks = {}\nvariants = {}\nseeds = {}\neval_batch_size = {}\n",
            join(&self.tasks),
            join(&self.variants),
            join(&self.seeds),
            self.eval_batch_size
        );
        out
    }

    /// SHA-256 over the canonical text.
    pub fn hash(&self) -> String {
        let mut m = Manifest::new();
        m.set("config", self.to_text().replace('\n', "|"));
        config_hash(&m)
    }

    pub fn source_code(&self) -> &str {
        &self.bed.source.code
    }

    pub fn language_codes(&self) -> Vec<String> {
        self.bed.languages().map(|l| l.code.clone()).collect()
    }
}
