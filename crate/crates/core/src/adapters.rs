//! Bottleneck adapters, the two-slot stack (language then task), freezing
//! phases and standalone adapter files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Container, Manifest};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdapterKind {
    Language,
    Task,
}

impl AdapterKind {
    pub fn slot_name(self) -> &'static str {
        match self {
            AdapterKind::Language => "lang",
            AdapterKind::Task => "task",
        }
    }

    pub fn prefix(self) -> String {
        format!("adapter.{}.", self.slot_name())
    }

    pub fn param_name(self, layer: usize, which: &str) -> String {
        format!("adapter.{}.{layer}.{which}", self.slot_name())
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slot_name())
    }
}

impl FromStr for AdapterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lang" => Ok(AdapterKind::Language),
            "task" => Ok(AdapterKind::Task),
            other => Err(Error::Config(format!("unknown adapter kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub bottleneck: usize,
    /// Whether the orthogonality constraint applies to this slot.
    pub orthogonal: bool,
    /// Adds the residual input back (`x_a = δ + x_r`); off only for ablations.
    pub residual: bool,
}

impl AdapterConfig {
    pub fn language() -> Self {
        AdapterConfig {
            kind: AdapterKind::Language,
            bottleneck: 8,
            orthogonal: false,
            residual: true,
        }
    }

    pub fn task() -> Self {
        AdapterConfig {
            kind: AdapterKind::Task,
            bottleneck: 4,
            orthogonal: false,
            residual: true,
        }
    }

    pub fn with_bottleneck(mut self, d: usize) -> Self {
        self.bottleneck = d;
        self
    }

    pub fn orthogonal(mut self, on: bool) -> Self {
        self.orthogonal = on;
        self
    }

    pub fn validate(&self, hidden: usize) -> Result<()> {
        if self.bottleneck == 0 || self.bottleneck >= hidden {
            return Err(Error::Config(format!(
                "adapter bottleneck {} must lie in [1, {hidden})",
                self.bottleneck
            )));
        }
        Ok(())
    }
}

/// Which slots are populated; weights live in the model's parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterStack {
    pub layers: usize,
    pub hidden: usize,
    pub lang: Option<AdapterConfig>,
    pub task: Option<AdapterConfig>,
}

impl AdapterStack {
    pub fn empty(layers: usize, hidden: usize) -> Self {
        AdapterStack {
            layers,
            hidden,
            lang: None,
            task: None,
        }
    }

    pub fn slot(&self, kind: AdapterKind) -> Option<AdapterConfig> {
        match kind {
            AdapterKind::Language => self.lang,
            AdapterKind::Task => self.task,
        }
    }

    fn slot_mut(&mut self, kind: AdapterKind) -> &mut Option<AdapterConfig> {
        match kind {
            AdapterKind::Language => &mut self.lang,
            AdapterKind::Task => &mut self.task,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lang.is_none() && self.task.is_none()
    }
}

/// `δ = relu(x_h W_d) W_u`, `x_a = δ + x_r` (or `δ` alone without residual).
pub fn adapter_forward(
    tape: &mut Tape,
    x_h: Var,
    x_r: Var,
    w_down: Var,
    w_up: Var,
    residual: bool,
) -> Result<(Var, Var)> {
    let down = tape.matmul(x_h, w_down)?;
    let act = tape.relu(down);
    let delta = tape.matmul(act, w_up)?;
    let out = if residual { tape.add(delta, x_r)? } else { delta };
    Ok((delta, out))
}

/// One adapter's weights for every layer, detached from any model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterWeights {
    pub config: AdapterConfig,
    pub hidden: usize,
    /// `(W_d [H×d], W_u [d×H])` per layer.
    pub layers: Vec<(Tensor, Tensor)>,
}

/// `W_d ~ U(±1/√H)`, `W_u = 0`: the adapter starts as the identity map.
pub fn init_adapter(config: AdapterConfig, hidden: usize, layers: usize, seed: u64) -> Result<AdapterWeights> {
    config.validate(hidden)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (hidden as f64).sqrt();
    Ok(AdapterWeights {
        config,
        hidden,
        layers: (0..layers)
            .map(|_| {
                (
                    Tensor::uniform(&[hidden, config.bottleneck], bound, &mut rng),
                    Tensor::zeros(&[config.bottleneck, hidden]),
                )
            })
            .collect(),
    })
}

const ADAPTER_MAGIC: &str = "orthoadapt-adapter";

impl AdapterWeights {
    pub fn save(&self, path: &Path, extra: &Manifest) -> Result<()> {
        let mut manifest = extra.clone();
        manifest.set("kind", self.config.kind.slot_name());
        manifest.set("bottleneck", self.config.bottleneck);
        manifest.set("orthogonal", self.config.orthogonal);
        manifest.set("residual", self.config.residual);
        manifest.set("hidden", self.hidden);
        manifest.set("layers", self.layers.len());
        let mut c = Container::new(ADAPTER_MAGIC, manifest);
        for (l, (wd, wu)) in self.layers.iter().enumerate() {
            c.push(format!("{l}.w_down"), wd.clone());
            c.push(format!("{l}.w_up"), wu.clone());
        }
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<(AdapterWeights, Manifest)> {
        let c = Container::load(path, ADAPTER_MAGIC)?;
        let m = &c.manifest;
        let config = AdapterConfig {
            kind: m.get("kind")?.parse()?,
            bottleneck: m.parse("bottleneck")?,
            orthogonal: m.parse("orthogonal")?,
            residual: m.parse("residual")?,
        };
        let hidden: usize = m.parse("hidden")?;
        let n: usize = m.parse("layers")?;
        let layers = (0..n)
            .map(|l| {
                Ok((
                    c.tensor(&format!("{l}.w_down"))?.clone(),
                    c.tensor(&format!("{l}.w_up"))?.clone(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let w = AdapterWeights {
            config,
            hidden,
            layers,
        };
        w.check_shapes()?;
        Ok((w, c.manifest))
    }

    fn check_shapes(&self) -> Result<()> {
        self.config.validate(self.hidden)?;
        for (l, (wd, wu)) in self.layers.iter().enumerate() {
            if wd.shape() != [self.hidden, self.config.bottleneck]
                || wu.shape() != [self.config.bottleneck, self.hidden]
            {
                return Err(Error::Checkpoint(format!("adapter layer {l} has inconsistent shapes")));
            }
        }
        Ok(())
    }
}

/// Which parameters receive gradients during a training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    LangAdapterTraining,
    TaskAdapterTraining,
    FullFinetune,
    TaskOnlyAdapterTraining,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::LangAdapterTraining => "lang_adapter_training",
            Phase::TaskAdapterTraining => "task_adapter_training",
            Phase::FullFinetune => "full_finetune",
            Phase::TaskOnlyAdapterTraining => "task_only_adapter_training",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Phase::LangAdapterTraining,
            Phase::TaskAdapterTraining,
            Phase::FullFinetune,
            Phase::TaskOnlyAdapterTraining,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::UnknownPhase(s.to_string()))
    }
}

impl Model {
    /// Installs `weights` into its slot, replacing whatever was there.
    pub fn insert_adapter(&mut self, weights: &AdapterWeights) -> Result<()> {
        if weights.hidden != self.config.hidden || weights.layers.len() != self.config.layers {
            return Err(Error::Structural(format!(
                "adapter built for {} layers × H={} does not fit {} layers × H={}",
                weights.layers.len(),
                weights.hidden,
                self.config.layers,
                self.config.hidden
            )));
        }
        weights.check_shapes()?;
        let kind = weights.config.kind;
        self.remove_adapter(kind);
        for (l, (wd, wu)) in weights.layers.iter().enumerate() {
            self.params.insert(kind.param_name(l, "w_down"), wd.clone());
            self.params.insert(kind.param_name(l, "w_up"), wu.clone());
        }
        *self.stack.slot_mut(kind) = Some(weights.config);
        Ok(())
    }

    pub fn add_fresh_adapter(&mut self, config: AdapterConfig, seed: u64) -> Result<()> {
        let w = init_adapter(config, self.config.hidden, self.config.layers, seed)?;
        self.insert_adapter(&w)
    }

    pub fn remove_adapter(&mut self, kind: AdapterKind) -> Option<AdapterWeights> {
        let out = self.extract_adapter(kind).ok();
        let prefix = kind.prefix();
        let names: Vec<String> = self
            .params
            .names()
            .filter(|n| n.starts_with(&prefix))
            .map(str::to_string)
            .collect();
        for n in names {
            self.params.remove(&n);
        }
        *self.stack.slot_mut(kind) = None;
        out
    }

    pub fn extract_adapter(&self, kind: AdapterKind) -> Result<AdapterWeights> {
        let config = self
            .stack
            .slot(kind)
            .ok_or_else(|| Error::Structural(format!("no {kind} adapter installed")))?;
        let layers = (0..self.config.layers)
            .map(|l| {
                Ok((
                    self.params.value(&kind.param_name(l, "w_down"))?.clone(),
                    self.params.value(&kind.param_name(l, "w_up"))?.clone(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AdapterWeights {
            config,
            hidden: self.config.hidden,
            layers,
        })
    }

    /// Replaces the language adapter while leaving everything else untouched.
    pub fn swap_language_adapter(&mut self, weights: &AdapterWeights) -> Result<()> {
        if weights.config.kind != AdapterKind::Language {
            return Err(Error::Structural("expected a language adapter".into()));
        }
        weights.check_shapes()?;
        if let Some(current) = self.stack.lang {
            for l in 0..self.config.layers.max(weights.layers.len()) {
                let expected = vec![self.config.hidden, current.bottleneck];
                let got = weights
                    .layers
                    .get(l)
                    .map(|(wd, _)| wd.shape().to_vec())
                    .unwrap_or_default();
                if got != expected {
                    return Err(Error::Swap { layer: l, expected, got });
                }
            }
        }
        if self.stack.lang.is_none() {
            return self.insert_adapter(weights);
        }
        // Overwrite in place so parameter order and trainable flags persist.
        for (l, (wd, wu)) in weights.layers.iter().enumerate() {
            self.params
                .get_mut(&AdapterKind::Language.param_name(l, "w_down"))?
                .value = wd.clone();
            self.params
                .get_mut(&AdapterKind::Language.param_name(l, "w_up"))?
                .value = wu.clone();
        }
        self.stack.lang = Some(weights.config);
        Ok(())
    }

    /// Sets `requires_grad` according to `phase`.
    pub fn set_trainable(&mut self, phase: Phase) -> Result<()> {
        let tied = self.config.tied_embeddings;
        match phase {
            Phase::LangAdapterTraining => {
                if self.stack.lang.is_none() {
                    return Err(Error::Structural(format!("{phase} needs a language adapter")));
                }
                self.params.set_trainable_where(|n| {
                    n.starts_with("adapter.lang.") || (!tied && n.starts_with("mlm."))
                });
            }
            Phase::TaskAdapterTraining | Phase::TaskOnlyAdapterTraining => {
                if self.stack.task.is_none() {
                    return Err(Error::Structural(format!("{phase} needs a task adapter")));
                }
                if phase == Phase::TaskOnlyAdapterTraining && self.stack.lang.is_some() {
                    return Err(Error::Structural(format!(
                        "{phase} forbids a language adapter in the stack"
                    )));
                }
                if self.head.is_none() {
                    return Err(Error::Structural(format!("{phase} needs a task head")));
                }
                self.params
                    .set_trainable_where(|n| n.starts_with("adapter.task.") || n.starts_with("head."));
            }
            Phase::FullFinetune => self.params.set_all_trainable(true),
        }
        Ok(())
    }

    /// Parameters the orthogonality optimizer may update for `kind`.
    pub fn adapter_param_names(&self, kind: AdapterKind) -> Vec<String> {
        let prefix = kind.prefix();
        self.params
            .names()
            .filter(|n| n.starts_with(&prefix))
            .map(str::to_string)
            .collect()
    }
}
