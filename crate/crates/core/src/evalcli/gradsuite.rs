//! Finite-difference checks over every differentiable operation and over
//! the full composite (encoder + both adapters + each loss).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapters::{adapter_forward, AdapterConfig, AdapterKind};
use crate::encoder::{EncodeOptions, EncoderConfig, Model, TokenBatch};
use crate::error::Result;
use crate::exec::ExecMode;
use crate::numcore::{grad_check, Binder, GradCheckReport, Reduction, Tape, Tensor, Var};
use crate::objectives::{mlm_loss, ortho_loss, seq_cls_loss, tagging_loss, OrthoOptions, COSINE_EPS};
use crate::synthlang::TaskKind;

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckCase {
    pub name: String,
    pub report: GradCheckReport,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + Sync + Send>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, CaseFn, Vec<Tensor>)> {
    let mut r = |shape: &[usize]| Tensor::uniform(shape, 1.0, rng);
    let (a, b, c, row) = (r(&[4, 5]), r(&[4, 5]), r(&[5, 3]), r(&[5]));
    let (g, bias) = (r(&[5]), r(&[5]));
    let w = r(&[5, 4]);
    vec![
        ("matmul", Box::new(|t: &mut Tape, v: &[Var]| {
            let m = t.matmul(v[0], v[1])?;
            Ok(t.sum(m))
        }) as CaseFn, vec![a.clone(), c.clone()]),
        ("transpose", Box::new(move |t: &mut Tape, v: &[Var]| {
            let tr = t.transpose(v[0])?;
            let wv = t.constant(w.clone());
            let k = t.mul(tr, wv)?;
            Ok(t.sum(k))
        }), vec![a.clone()]),
        ("add_sub_mul", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let m = t.mul(d, v[1])?;
            let m = t.mul(m, s)?;
            Ok(t.sum(m))
        }), vec![a.clone(), b.clone()]),
        ("add_row", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.add_row(v[0], v[1])?;
            let s = t.mul(s, s)?;
            Ok(t.sum(s))
        }), vec![a.clone(), row.clone()]),
        ("scale", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.scale(v[0], -2.5);
            let s = t.mul(s, v[0])?;
            Ok(t.sum(s))
        }), vec![a.clone()]),
        ("relu", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.relu(v[0]);
            let s = t.mul(s, v[1])?;
            Ok(t.sum(s))
        }), vec![a.clone(), b.clone()]),
        ("gelu", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.gelu(v[0]);
            let s = t.mul(s, v[1])?;
            Ok(t.sum(s))
        }), vec![a.clone(), b.clone()]),
        ("tanh", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.tanh(v[0]);
            let s = t.mul(s, v[1])?;
            Ok(t.sum(s))
        }), vec![a.clone(), b.clone()]),
        ("softmax_rows", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.softmax_rows(v[0])?;
            let s = t.mul(s, v[1])?;
            Ok(t.sum(s))
        }), vec![a.clone(), b.clone()]),
        ("layer_norm", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let s = t.mul(s, v[3])?;
            Ok(t.sum(s))
        }), vec![a.clone(), g, bias, b.clone()]),
        ("gather_rows", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.gather_rows(v[0], &[3, 0, 0, 2, 1])?;
            let s = t.mul(s, s)?;
            Ok(t.sum(s))
        }), vec![a.clone()]),
        ("slice_concat_cols", Box::new(|t: &mut Tape, v: &[Var]| {
            let l = t.slice_cols(v[0], 0, 2)?;
            let r = t.slice_cols(v[0], 2, 3)?;
            let s = t.concat_cols(&[r, l])?;
            let s = t.mul(s, v[1])?;
            Ok(t.sum(s))
        }), vec![a.clone(), b.clone()]),
        ("slice_concat_rows", Box::new(|t: &mut Tape, v: &[Var]| {
            let top = t.slice_rows(v[0], 0, 1)?;
            let rest = t.slice_rows(v[0], 1, 3)?;
            let s = t.concat_rows(&[rest, top])?;
            let s = t.mul(s, v[1])?;
            Ok(t.sum(s))
        }), vec![a.clone(), b.clone()]),
        ("reshape_mean", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.mul(v[0], v[0])?;
            let s = t.reshape(s, vec![20])?;
            Ok(t.mean(s))
        }), vec![a.clone()]),
        ("cross_entropy", Box::new(|t: &mut Tape, v: &[Var]| {
            t.cross_entropy(v[0], &[Some(1), None, Some(4), Some(0)], Reduction::Mean)
        }), vec![a.clone()]),
        ("cosine_sq_rows", Box::new(|t: &mut Tape, v: &[Var]| {
            let s = t.cosine_sq_rows(v[0], v[1], COSINE_EPS)?;
            Ok(t.sum(s))
        }), vec![a.clone(), b.clone()]),
        ("adapter_forward", Box::new(|t: &mut Tape, v: &[Var]| {
            let (delta, out) = adapter_forward(t, v[0], v[1], v[2], v[3], true)?;
            let d = t.mul(delta, out)?;
            Ok(t.sum(d))
        }), vec![a.clone(), b.clone(), r(&[5, 3]), r(&[3, 5])]),
    ]
}

fn composite_model(kind: TaskKind, pre_norm: bool, seed: u64) -> Result<Model> {
    let config = EncoderConfig {
        layers: 2,
        hidden: 8,
        heads: 2,
        ffn: 12,
        vocab_size: 11,
        max_len: 8,
        ln_eps: 1e-5,
        adapter_pre_norm: pre_norm,
        tied_embeddings: !pre_norm,
        ..EncoderConfig::default()
    };
    let mut model = Model::new(config, seed)?;
    model.add_fresh_adapter(AdapterConfig::language().with_bottleneck(3), seed + 1)?;
    model.add_fresh_adapter(AdapterConfig::task().with_bottleneck(2), seed + 2)?;
    model.set_head(kind, 3, seed + 3)?;
    // Non-zero up-projections so the adapters contribute.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
    for (name, p) in model.params.iter_mut() {
        if name.ends_with("w_up") {
            p.value = Tensor::uniform(p.value.shape(), 0.3, &mut rng);
        }
    }
    Ok(model)
}

fn composite_case(kind: TaskKind, pre_norm: bool, seed: u64, mode: ExecMode) -> Result<GradCheckReport> {
    let model = composite_model(kind, pre_norm, seed)?;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let inputs: Vec<Tensor> = model.params.iter().map(|(_, p)| p.value.clone()).collect();
    let batch = TokenBatch::from_sequences(&[vec![2, 5, 6, 7], vec![2, 8, 9]]);
    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let mut binder = Binder::new();
        for (n, v) in names.iter().zip(vars) {
            binder.bind(n.clone(), *v);
        }
        let (states, acts) = model.encode(tape, &mut binder, &batch, EncodeOptions::default())?;
        let mlm = model.mlm_logits(tape, &mut binder, states, &[1, 5])?;
        let mut loss = mlm_loss(tape, mlm, &[Some(5), Some(8)])?;
        let task = match kind {
            TaskKind::SeqCls => {
                let logits = model.cls_logits(tape, &mut binder, states, &batch)?;
                seq_cls_loss(tape, logits, &[2, 0])?
            }
            TaskKind::Tagging => {
                let logits = model.tag_logits(tape, &mut binder, states)?;
                let tags = [None, Some(0), Some(2), Some(1), None, Some(1), Some(0), None];
                tagging_loss(tape, logits, &tags, false)?
            }
        };
        loss = tape.add(loss, task)?;
        for slot in [AdapterKind::Language, AdapterKind::Task] {
            let (ortho, _) = ortho_loss(tape, &acts, slot, OrthoOptions::default())?;
            loss = tape.add(loss, ortho)?;
        }
        Ok(loss)
    };
    grad_check(f, &inputs, STEP, mode)
}

/// Runs every case; errors (not tolerance failures) abort.
pub fn gradcheck_suite(seed: u64, mode: ExecMode) -> Result<Vec<GradCheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for (name, f, inputs) in op_cases(&mut rng) {
        let report = grad_check(f, &inputs, STEP, mode)?;
        cases.push(GradCheckCase {
            name: name.to_string(),
            report,
        });
    }
    for kind in [TaskKind::SeqCls, TaskKind::Tagging] {
        for pre_norm in [false, true] {
            let norm = if pre_norm { "pre-norm" } else { "post-norm" };
            cases.push(GradCheckCase {
                name: format!("composite/{kind}/{norm}"),
                report: composite_case(kind, pre_norm, seed, mode)?,
            });
        }
    }
    Ok(cases)
}
