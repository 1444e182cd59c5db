//! Batched inference and task metrics.

use crate::encoder::{EncodeOptions, Model, TokenBatch};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::numcore::{Binder, Tape, Tensor};
use crate::synthlang::{Target, TaskDataset, TaskKind};

/// Task logits for each input, in order: `[C]` per example for sequence
/// classification, `[len × C]` for tagging. Runs without dropout; batches are
/// evaluated in parallel when `mode` allows.
pub fn task_logits(
    model: &Model,
    kind: TaskKind,
    inputs: &[Vec<u32>],
    batch_size: usize,
    mode: ExecMode,
) -> Result<Vec<Tensor>> {
    let batch_size = batch_size.max(1);
    let chunks: Vec<&[Vec<u32>]> = inputs.chunks(batch_size).collect();
    let per_chunk = exec::map(mode, &chunks, |chunk| -> Result<Vec<Tensor>> {
        let batch = TokenBatch::from_sequences(chunk);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let (states, _) = model.encode(&mut tape, &mut binder, &batch, EncodeOptions::default())?;
        match kind {
            TaskKind::SeqCls => {
                let logits = model.cls_logits(&mut tape, &mut binder, states, &batch)?;
                let v = tape.value(logits);
                (0..batch.batch)
                    .map(|b| Ok(Tensor::vector(v.row(b).to_vec())))
                    .collect()
            }
            TaskKind::Tagging => {
                let logits = model.tag_logits(&mut tape, &mut binder, states)?;
                let v = tape.value(logits);
                let c = v.dims2().1;
                chunk
                    .iter()
                    .enumerate()
                    .map(|(b, seq)| {
                        let rows = &v.values()[b * batch.len * c..(b * batch.len + seq.len()) * c];
                        Tensor::matrix(seq.len(), c, rows.to_vec())
                    })
                    .collect()
            }
        }
    });
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in per_chunk {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::shape("accuracy", &[pred.len()], &[gold.len()]));
    }
    if gold.is_empty() {
        return Err(Error::EmptyLoss);
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Micro-averaged F1 over positions whose gold tag is not `None`.
///
/// With `outside = Some(o)`, tag `o` is the negative class (CoNLL "O"): it
/// contributes neither true nor predicted positives. Without it every tag is
/// a positive class and micro-F1 equals token accuracy.
pub fn token_f1(pred: &[usize], gold: &[Option<usize>], outside: Option<usize>) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::shape("token_f1", &[pred.len()], &[gold.len()]));
    }
    let (mut tp, mut pred_pos, mut gold_pos) = (0usize, 0usize, 0usize);
    for (&p, g) in pred.iter().zip(gold) {
        let Some(g) = *g else { continue };
        let p_pos = Some(p) != outside;
        let g_pos = Some(g) != outside;
        pred_pos += usize::from(p_pos);
        gold_pos += usize::from(g_pos);
        tp += usize::from(p_pos && p == g);
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / pred_pos as f64;
    let recall = tp as f64 / gold_pos as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// The task metric of `data` under `model`: accuracy or token micro-F1.
pub fn evaluate_dataset(model: &Model, data: &TaskDataset, batch_size: usize, mode: ExecMode) -> Result<f64> {
    let examples = data.model_inputs();
    let inputs: Vec<Vec<u32>> = examples.iter().map(|(ids, _)| ids.clone()).collect();
    let logits = task_logits(model, data.kind, &inputs, batch_size, mode)?;
    match data.kind {
        TaskKind::SeqCls => {
            let pred: Vec<usize> = logits.iter().map(|l| argmax(l.values())).collect();
            let gold: Vec<usize> = examples
                .iter()
                .map(|(_, t)| match t {
                    Target::Class(c) => Ok(*c),
                    Target::Tags(_) => Err(Error::Structural("tag target in a sequence task".into())),
                })
                .collect::<Result<_>>()?;
            accuracy(&pred, &gold)
        }
        TaskKind::Tagging => {
            let mut pred = Vec::new();
            let mut gold = Vec::new();
            for (l, (_, t)) in logits.iter().zip(&examples) {
                let Target::Tags(tags) = t else {
                    return Err(Error::Structural("class target in a tagging task".into()));
                };
                let c = l.dims2().1;
                pred.extend(l.values().chunks(c).map(argmax));
                gold.extend(tags.iter().copied());
            }
            token_f1(&pred, &gold, None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        assert_eq!(token_f1(&[0, 1, 2], &[Some(0), Some(1), Some(2)], None).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 1], &[1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn hand_case_with_outside_class() {
        // Ten tokens; tag 0 is "outside". Gold positives: 6, predicted all 1.
        let gold = [0, 1, 1, 2, 0, 3, 1, 0, 2, 0].map(Some);
        let pred = [1; 10];
        // tp = 3 (the three gold 1s); predicted positives = 10; gold positives = 6.
        let p = 3.0 / 10.0;
        let r = 3.0 / 6.0;
        let expected = 2.0 * p * r / (p + r);
        assert!((token_f1(&pred, &gold, Some(0)).unwrap() - expected).abs() < 1e-15);
        // Without an outside class micro-F1 is accuracy: 3 / 10.
        assert!((token_f1(&pred, &gold, None).unwrap() - 0.3).abs() < 1e-15);
        // Predicting a class absent from gold scores zero.
        assert_eq!(token_f1(&[4; 10], &gold, Some(0)).unwrap(), 0.0);
    }

    #[test]
    fn ignored_positions_do_not_matter() {
        let gold = [Some(1), None, Some(2), None];
        let a = token_f1(&[1, 0, 2, 0], &gold, None).unwrap();
        let b = token_f1(&[1, 3, 2, 1], &gold, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(token_f1(&[1], &[Some(1), Some(2)], None).is_err());
        assert!(accuracy(&[1], &[]).is_err());
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }
}
