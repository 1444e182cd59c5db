//! The seven training configurations of the experiment matrix.

use std::fmt;
use std::str::FromStr;

use super::config::ExperimentConfig;
use crate::adapters::{AdapterConfig, Phase};
use crate::error::{Error, Result};
use crate::training::{mix, PhaseConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    FullFt,
    TNoo,
    TOrt,
    LNooTNoo,
    LNooTOrt,
    LOrtTNoo,
    LOrtTOrt,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::FullFt,
        Variant::TNoo,
        Variant::TOrt,
        Variant::LNooTNoo,
        Variant::LNooTOrt,
        Variant::LOrtTNoo,
        Variant::LOrtTOrt,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::FullFt => "full-ft",
            Variant::TNoo => "t-noo",
            Variant::TOrt => "t-ort",
            Variant::LNooTNoo => "l-noo+t-noo",
            Variant::LNooTOrt => "l-noo+t-ort",
            Variant::LOrtTNoo => "l-ort+t-noo",
            Variant::LOrtTOrt => "l-ort+t-ort",
        }
    }

    /// `Some(ortho)` when the variant stacks a language adapter.
    pub fn lang_ortho(self) -> Option<bool> {
        match self {
            Variant::LNooTNoo | Variant::LNooTOrt => Some(false),
            Variant::LOrtTNoo | Variant::LOrtTOrt => Some(true),
            _ => None,
        }
    }

    /// `Some(ortho)` when the variant trains a task adapter.
    pub fn task_ortho(self) -> Option<bool> {
        match self {
            Variant::FullFt => None,
            Variant::TNoo | Variant::LNooTNoo | Variant::LOrtTNoo => Some(false),
            Variant::TOrt | Variant::LNooTOrt | Variant::LOrtTOrt => Some(true),
        }
    }

    /// The variant with the same task slot but no language adapter.
    pub fn task_only_counterpart(self) -> Option<Variant> {
        self.lang_ortho()?;
        Some(if self.task_ortho() == Some(true) { Variant::TOrt } else { Variant::TNoo })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// A variant resolved against an experiment config and a run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub variant: Variant,
    /// Language adapter and its training phase, for `l-*` variants.
    pub lang: Option<(AdapterConfig, PhaseConfig)>,
    /// Task adapter (absent for full fine-tuning) and the task phase.
    pub task_adapter: Option<AdapterConfig>,
    pub task: PhaseConfig,
}

impl VariantSpec {
    pub fn resolve(variant: Variant, cfg: &ExperimentConfig, seed: u64) -> VariantSpec {
        let lang = variant.lang_ortho().map(|ortho| {
            (cfg.lang_adapter().orthogonal(ortho), lang_phase(cfg, ortho, seed))
        });
        let (task_adapter, task) = match variant.task_ortho() {
            None => (
                None,
                PhaseConfig {
                    seed: mix(seed, 30, 0),
                    ..cfg.full_ft.clone()
                },
            ),
            Some(ortho) => {
                let phase = if lang.is_some() {
                    Phase::TaskAdapterTraining
                } else {
                    Phase::TaskOnlyAdapterTraining
                };
                let task = PhaseConfig {
                    phase,
                    ortho,
                    seed: mix(seed, 20, 0),
                    ..cfg.task.clone()
                };
                (Some(cfg.task_adapter().orthogonal(ortho)), task)
            }
        };
        VariantSpec {
            variant,
            lang,
            task_adapter,
            task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let has_lang = self.lang.is_some();
        if has_lang != self.variant.lang_ortho().is_some() {
            return Err(Error::Config(format!("{}: language slot mismatch", self.variant)));
        }
        if let Some((adapter, phase)) = &self.lang {
            if Some(adapter.orthogonal) != self.variant.lang_ortho() || phase.ortho != adapter.orthogonal {
                return Err(Error::Config(format!("{}: language ortho flag mismatch", self.variant)));
            }
            phase.validate()?;
        }
        match (&self.task_adapter, self.variant.task_ortho()) {
            (None, None) => {}
            (Some(a), Some(o)) if a.orthogonal == o && self.task.ortho == o => {}
            _ => return Err(Error::Config(format!("{}: task slot mismatch", self.variant))),
        }
        self.task.validate()
    }
}

/// The language-adapter phase for one language at one seed; shared by every
/// `l-*` variant with the same ortho flag.
pub fn lang_phase(cfg: &ExperimentConfig, ortho: bool, seed: u64) -> PhaseConfig {
    PhaseConfig {
        ortho,
        seed: mix(seed, 10, u64::from(ortho)),
        ..cfg.lang.clone()
    }
}
