//! Zero-shot evaluation: swap in a target-language adapter and score the
//! target test split with the source-trained task slot.

use std::fmt;
use std::path::Path;

use super::metrics::evaluate_dataset;
use crate::adapters::{AdapterKind, AdapterWeights};
use crate::checkpoint::missing_or_io;
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::synthlang::{TaskDataset, TaskKind};

/// Language column holding the mean over non-source languages.
pub const AVG_Z: &str = "avg_z";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: String,
    pub task: TaskKind,
    pub language: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

impl EvalReport {
    /// `variant<TAB>task<TAB>language<TAB>value` with four decimals.
    pub fn row(&self) -> String {
        format!("{}\t{}\t{}\t{:.4}", self.variant, self.task, self.language, self.value)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.row())
    }
}

/// Per `(variant, task, seed)` group, the arithmetic mean over every language
/// other than `source`, as extra reports with language [`AVG_Z`].
pub fn avg_z(reports: &[EvalReport], source: &str) -> Vec<EvalReport> {
    let mut groups: Vec<(EvalReport, Vec<f64>)> = Vec::new();
    for r in reports.iter().filter(|r| r.language != source && r.language != AVG_Z) {
        match groups
            .iter_mut()
            .find(|(g, _)| g.variant == r.variant && g.task == r.task && g.seed == r.seed)
        {
            Some((_, values)) => values.push(r.value),
            None => groups.push((r.clone(), vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|(mut g, values)| {
            g.language = AVG_Z.to_string();
            g.value = values.iter().sum::<f64>() / values.len() as f64;
            g
        })
        .collect()
}

/// Scores `test` with `model` after swapping in `target` as the language
/// adapter. The caller's model is untouched; inside the evaluation copy the
/// backbone, task slot and head are verified byte-identical after the swap.
pub fn evaluate_swapped(
    model: &Model,
    target: Option<&AdapterWeights>,
    test: &TaskDataset,
    batch_size: usize,
    mode: ExecMode,
    variant: &str,
) -> Result<f64> {
    let head = model
        .head
        .ok_or_else(|| Error::Structural("checkpoint has no task head".into()))?;
    if head.kind != test.kind || head.num_labels != test.num_labels {
        return Err(Error::Structural(format!(
            "head ({}, {} labels) does not match the {} test set ({} labels)",
            head.kind, head.num_labels, test.kind, test.num_labels
        )));
    }
    let is_lang = |n: &str| n.starts_with(&AdapterKind::Language.prefix());
    let mut swapped = model.clone();
    match (model.stack.lang.is_some(), target) {
        (true, Some(w)) => swapped.swap_language_adapter(w)?,
        (true, None) => return Err(Error::MissingAdapter(variant.to_string())),
        (false, Some(_)) => {
            return Err(Error::Structural(format!(
                "`{variant}` has no language slot; it cannot take a target adapter"
            )))
        }
        (false, None) => {}
    }
    if swapped.params.bytes_where(|n| !is_lang(n)) != model.params.bytes_where(|n| !is_lang(n)) {
        return Err(Error::Structural("adapter swap touched non-language parameters".into()));
    }
    evaluate_dataset(&swapped, test, batch_size, mode)
}

/// Loads `checkpoint`, swaps in the adapter at `target_adapter` (required for
/// checkpoints with a language slot) and scores `test`. The checkpoint file
/// is verified unchanged afterwards.
pub fn evaluate_zero_shot(
    checkpoint: &Path,
    target_adapter: Option<&Path>,
    test: &TaskDataset,
    batch_size: usize,
    mode: ExecMode,
) -> Result<EvalReport> {
    let before = std::fs::read(checkpoint).map_err(|e| missing_or_io(checkpoint, e))?;
    let (model, manifest) = Model::load(checkpoint)?;
    let variant = manifest.get_opt("variant").unwrap_or("unknown").to_string();
    let seed = manifest.get_opt("seed").and_then(|s| s.parse().ok()).unwrap_or(model.seed);
    let target = match target_adapter {
        Some(path) => {
            let (w, _) = AdapterWeights::load(path)?;
            if w.config.kind != AdapterKind::Language {
                return Err(Error::Structural(format!("{} is not a language adapter", path.display())));
            }
            Some(w)
        }
        None => None,
    };
    let value = evaluate_swapped(&model, target.as_ref(), test, batch_size, mode, &variant)?;
    let after = std::fs::read(checkpoint).map_err(|e| missing_or_io(checkpoint, e))?;
    if before != after {
        return Err(Error::Structural(format!("{} changed during evaluation", checkpoint.display())));
    }
    Ok(EvalReport {
        variant,
        task: test.kind,
        language: test.language.clone(),
        metric: test.kind.metric_name().to_string(),
        value,
        seed,
    })
}
