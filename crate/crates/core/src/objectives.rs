//! Training losses: masked-LM corruption and loss, sequence classification,
//! token tagging, and the per-layer orthogonality loss between an adapter
//! slot's input and output.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::adapters::AdapterKind;
use crate::encoder::LayerActivations;
use crate::error::{Error, Result};
use crate::numcore::{Reduction, Tape, Var};
use crate::synthlang::{is_reserved, MASK, NUM_RESERVED};

pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskingPolicy {
    fraction: f64,
    /// Probabilities of (mask token, random token, keep original).
    split: [f64; 3],
    mask_id: u32,
    vocab_size: usize,
}

impl MaskingPolicy {
    pub fn new(fraction: f64, split: [f64; 3], vocab_size: usize) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("mask fraction {fraction} outside (0, 1]")));
        }
        if split.iter().any(|p| *p < 0.0) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mask split {split:?} must be non-negative and sum to 1")));
        }
        if vocab_size <= NUM_RESERVED {
            return Err(Error::Config("vocabulary has no maskable tokens".into()));
        }
        Ok(MaskingPolicy {
            fraction,
            split,
            mask_id: MASK,
            vocab_size,
        })
    }

    /// 15% of tokens; 80% `[MASK]`, 10% random, 10% unchanged.
    pub fn standard(vocab_size: usize) -> Result<Self> {
        Self::new(0.15, [0.8, 0.1, 0.1], vocab_size)
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub inputs: Vec<Vec<u32>>,
    /// Original id at selected positions, `None` elsewhere.
    pub labels: Vec<Vec<Option<usize>>>,
    /// Sequences with no maskable token.
    pub skipped: usize,
}

/// Corrupts each sequence: `fraction·n` of its non-special tokens (rounded
/// stochastically, at least one) are selected and replaced per the split.
pub fn apply_masking<R: Rng>(seqs: &[Vec<u32>], policy: &MaskingPolicy, rng: &mut R) -> MaskedBatch {
    let split = WeightedIndex::new(policy.split).expect("validated split");
    let mut out = MaskedBatch {
        inputs: Vec::with_capacity(seqs.len()),
        labels: Vec::with_capacity(seqs.len()),
        skipped: 0,
    };
    for seq in seqs {
        let mut input = seq.clone();
        let mut labels = vec![None; seq.len()];
        let candidates: Vec<usize> = (0..seq.len()).filter(|&i| !is_reserved(seq[i])).collect();
        if candidates.is_empty() {
            out.skipped += 1;
        } else {
            let exact = policy.fraction * candidates.len() as f64;
            let mut k = exact.floor() as usize;
            if rng.gen::<f64>() < exact - exact.floor() {
                k += 1;
            }
            let k = k.clamp(1, candidates.len());
            for i in rand::seq::index::sample(rng, candidates.len(), k) {
                let pos = candidates[i];
                labels[pos] = Some(seq[pos] as usize);
                input[pos] = match split.sample(rng) {
                    0 => policy.mask_id,
                    1 => rng.gen_range(NUM_RESERVED as u32..policy.vocab_size as u32),
                    _ => seq[pos],
                };
            }
        }
        out.inputs.push(input);
        out.labels.push(labels);
    }
    out
}

pub fn mlm_loss(tape: &mut Tape, logits: Var, labels: &[Option<usize>]) -> Result<Var> {
    tape.cross_entropy(logits, labels, Reduction::Mean)
}

pub fn seq_cls_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let labels: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
    tape.cross_entropy(logits, &labels, Reduction::Mean)
}

/// Token-level cross-entropy over labelled positions, averaged by default or
/// summed with `sum_reduction`.
pub fn tagging_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[Option<usize>],
    sum_reduction: bool,
) -> Result<Var> {
    let reduction = if sum_reduction { Reduction::Sum } else { Reduction::Mean };
    tape.cross_entropy(logits, labels, reduction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OrthoOptions {
    /// Average over every position, padding included.
    pub include_padding: bool,
    /// Compare `x_h` with `relu(x_h W_d) W_u` instead of the full output.
    pub exclude_residual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoLossReport {
    pub total: f64,
    pub per_layer: Vec<f64>,
    pub tokens: Vec<usize>,
}

/// `Σ_layers mean_tokens cos²(x_h, x_a)` for `slot`, returned as a tape scalar
/// together with its numeric breakdown.
pub fn ortho_loss(
    tape: &mut Tape,
    acts: &LayerActivations,
    slot: AdapterKind,
    opts: OrthoOptions,
) -> Result<(Var, OrthoLossReport)> {
    let rows: Vec<usize> = acts
        .mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m || opts.include_padding)
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyLoss);
    }
    let mut total: Option<Var> = None;
    let mut report = OrthoLossReport {
        total: 0.0,
        per_layer: Vec::with_capacity(acts.layers.len()),
        tokens: Vec::with_capacity(acts.layers.len()),
    };
    for (i, layer) in acts.layers.iter().enumerate() {
        let s = layer
            .slot(slot)
            .ok_or_else(|| Error::Structural(format!("layer {i} has no {slot} adapter")))?;
        let other = if opts.exclude_residual { s.delta } else { s.output };
        let u = tape.gather_rows(s.input, &rows)?;
        let v = tape.gather_rows(other, &rows)?;
        let cos = tape.cosine_sq_rows(u, v, COSINE_EPS)?;
        let mean = tape.mean(cos);
        report.per_layer.push(tape.value(mean).item());
        report.tokens.push(rows.len());
        total = Some(match total {
            None => mean,
            Some(t) => tape.add(t, mean)?,
        });
    }
    let total = total.ok_or_else(|| Error::Structural("model has no layers".into()))?;
    report.total = tape.value(total).item();
    Ok((total, report))
}

#[cfg(test)]
mod tests;
