//! Minimal transformer encoder with adapter injection after the feed-forward
//! sublayer, plus the MLM, sequence-classification and tagging heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapters::{adapter_forward, AdapterKind, AdapterStack};
use crate::error::{Error, Result};
use crate::numcore::{Binder, ParamSet, Tape, Tensor, Var};
use crate::synthlang::{TaskKind, PAD, SEP};

const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    /// MLM output projection shares the token embedding matrix.
    pub tied_embeddings: bool,
    /// Feed adapters the sublayer sum before its layer norm instead of after.
    pub adapter_pre_norm: bool,
    pub ln_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 32,
            heads: 4,
            ffn: 64,
            vocab_size: 125,
            max_len: 128,
            dropout: 0.1,
            tied_embeddings: true,
            adapter_pre_norm: false,
            ln_eps: 1e-12,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.vocab_size <= crate::synthlang::NUM_RESERVED {
            return Err(Error::Config("vocabulary too small".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Right-padded token ids with their attention mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenBatch {
    pub ids: Vec<u32>,
    /// `true` on real tokens, `false` on padding.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    pub fn from_sequences(seqs: &[Vec<u32>]) -> TokenBatch {
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            ids.extend(s);
            mask.extend(std::iter::repeat_n(true, s.len()));
            ids.extend(std::iter::repeat_n(PAD, len - s.len()));
            mask.extend(std::iter::repeat_n(false, len - s.len()));
        }
        TokenBatch {
            ids,
            mask,
            batch: seqs.len(),
            len,
        }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.len
    }

    /// Segment index per position: 0 up to and including the first `SEP`,
    /// 1 after it (sentence-pair inputs).
    pub fn segments(&self) -> Vec<usize> {
        self.ids
            .chunks(self.len.max(1))
            .flat_map(|row| {
                let mut seen = false;
                row.iter().map(move |&id| {
                    let s = usize::from(seen);
                    seen |= id == SEP;
                    s
                })
            })
            .collect()
    }

    /// Stable content hash over ids and mask.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.batch as u64);
        eat(self.len as u64);
        for (id, m) in self.ids.iter().zip(&self.mask) {
            eat(u64::from(*id) << 1 | u64::from(*m));
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EncodeOptions {
    /// Seed for dropout masks; `None` runs in evaluation mode.
    pub dropout_seed: Option<u64>,
    /// Cut the gradient path into this slot's input (orthogonality passes).
    pub detach_slot_input: Option<AdapterKind>,
}

/// Tape handles of one adapter slot in one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotActivation {
    /// `x_h`: what the slot receives.
    pub input: Var,
    /// `relu(x_h W_d) W_u`.
    pub delta: Var,
    /// `x_a`: the slot output.
    pub output: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRecord {
    /// Hidden state at the injection point, before any adapter.
    pub hidden: Var,
    pub lang: Option<SlotActivation>,
    pub task: Option<SlotActivation>,
}

impl LayerRecord {
    pub fn slot(&self, kind: AdapterKind) -> Option<SlotActivation> {
        match kind {
            AdapterKind::Language => self.lang,
            AdapterKind::Task => self.task,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub layers: Vec<LayerRecord>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskHead {
    pub kind: TaskKind,
    pub num_labels: usize,
}

/// Backbone, adapter slots and optional task head sharing one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub params: ParamSet,
    pub stack: AdapterStack,
    pub head: Option<TaskHead>,
    pub seed: u64,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], bound, rng)
}

pub fn is_backbone_param(name: &str) -> bool {
    name.starts_with("emb.") || name.starts_with("layer.")
}

impl Model {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, f, v) = (config.hidden, config.ffn, config.vocab_size);
        let mut p = ParamSet::new();
        p.insert("emb.tok", Tensor::uniform(&[v, h], 0.1, &mut rng));
        p.insert("emb.pos", Tensor::uniform(&[config.max_len, h], 0.1, &mut rng));
        p.insert("emb.seg", Tensor::uniform(&[2, h], 0.1, &mut rng));
        p.insert("emb.ln.g", Tensor::full(&[h], 1.0));
        p.insert("emb.ln.b", Tensor::zeros(&[h]));
        for l in 0..config.layers {
            for w in ["wq", "wk", "wv", "wo"] {
                p.insert(format!("layer.{l}.attn.{w}"), xavier(&mut rng, h, h));
            }
            for b in ["bq", "bk", "bv", "bo"] {
                p.insert(format!("layer.{l}.attn.{b}"), Tensor::zeros(&[h]));
            }
            p.insert(format!("layer.{l}.ln1.g"), Tensor::full(&[h], 1.0));
            p.insert(format!("layer.{l}.ln1.b"), Tensor::zeros(&[h]));
            p.insert(format!("layer.{l}.ffn.w1"), xavier(&mut rng, h, f));
            p.insert(format!("layer.{l}.ffn.b1"), Tensor::zeros(&[f]));
            p.insert(format!("layer.{l}.ffn.w2"), xavier(&mut rng, f, h));
            p.insert(format!("layer.{l}.ffn.b2"), Tensor::zeros(&[h]));
            p.insert(format!("layer.{l}.ln2.g"), Tensor::full(&[h], 1.0));
            p.insert(format!("layer.{l}.ln2.b"), Tensor::zeros(&[h]));
        }
        if !config.tied_embeddings {
            p.insert("mlm.w_out", xavier(&mut rng, h, v));
        }
        p.insert("mlm.bias", Tensor::zeros(&[v]));
        Ok(Model {
            stack: AdapterStack::empty(config.layers, config.hidden),
            config,
            params: p,
            head: None,
            seed,
        })
    }

    /// Installs a freshly initialised task head, replacing any existing one.
    pub fn set_head(&mut self, kind: TaskKind, num_labels: usize, seed: u64) -> Result<()> {
        if num_labels < 2 {
            return Err(Error::Config("a task head needs at least two labels".into()));
        }
        self.remove_head();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = self.config.hidden;
        match kind {
            TaskKind::SeqCls => {
                self.params.insert("head.cls.wp", xavier(&mut rng, h, h));
                self.params.insert("head.cls.bp", Tensor::zeros(&[h]));
                self.params.insert("head.cls.wc", xavier(&mut rng, h, num_labels));
                self.params.insert("head.cls.bc", Tensor::zeros(&[num_labels]));
            }
            TaskKind::Tagging => {
                self.params.insert("head.tag.w", xavier(&mut rng, h, num_labels));
                self.params.insert("head.tag.b", Tensor::zeros(&[num_labels]));
            }
        }
        self.head = Some(TaskHead { kind, num_labels });
        Ok(())
    }

    pub fn remove_head(&mut self) {
        let names: Vec<String> = self
            .params
            .names()
            .filter(|n| n.starts_with("head."))
            .map(str::to_string)
            .collect();
        for n in names {
            self.params.remove(&n);
        }
        self.head = None;
    }

    fn check_batch(&self, batch: &TokenBatch) -> Result<()> {
        if batch.len > self.config.max_len {
            return Err(Error::Length {
                len: batch.len,
                max: self.config.max_len,
            });
        }
        if let Some(&id) = batch
            .ids
            .iter()
            .find(|&&id| id as usize >= self.config.vocab_size)
        {
            return Err(Error::Vocab {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn dropout(
        &self,
        tape: &mut Tape,
        x: Var,
        rng: &mut Option<ChaCha8Rng>,
    ) -> Result<Var> {
        let p = self.config.dropout;
        let Some(rng) = rng.as_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, m)
    }

    fn linear(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        x: Var,
        w: &str,
        b: &str,
    ) -> Result<Var> {
        let wv = binder.var(tape, &self.params, w)?;
        let bv = binder.var(tape, &self.params, b)?;
        let y = tape.matmul(x, wv)?;
        tape.add_row(y, bv)
    }

    fn layer_norm(&self, tape: &mut Tape, binder: &mut Binder, x: Var, prefix: &str) -> Result<Var> {
        let g = binder.var(tape, &self.params, &format!("{prefix}.g"))?;
        let b = binder.var(tape, &self.params, &format!("{prefix}.b"))?;
        tape.layer_norm(x, g, b, self.config.ln_eps)
    }

    fn attention(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        x: Var,
        layer: usize,
        batch: &TokenBatch,
        mask_bias: &[Var],
    ) -> Result<Var> {
        let pre = format!("layer.{layer}.attn");
        let q = self.linear(tape, binder, x, &format!("{pre}.wq"), &format!("{pre}.bq"))?;
        let k = self.linear(tape, binder, x, &format!("{pre}.wk"), &format!("{pre}.bk"))?;
        let v = self.linear(tape, binder, x, &format!("{pre}.wv"), &format!("{pre}.bv"))?;
        let dh = self.config.hidden / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let t = batch.len;
        let mut per_example = Vec::with_capacity(batch.batch);
        for (b, bias) in mask_bias.iter().enumerate() {
            let (qb, kb, vb) = (
                tape.slice_rows(q, b * t, t)?,
                tape.slice_rows(k, b * t, t)?,
                tape.slice_rows(v, b * t, t)?,
            );
            let mut heads = Vec::with_capacity(self.config.heads);
            for hd in 0..self.config.heads {
                let qh = tape.slice_cols(qb, hd * dh, dh)?;
                let kh = tape.slice_cols(kb, hd * dh, dh)?;
                let vh = tape.slice_cols(vb, hd * dh, dh)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale);
                let scores = tape.add(scores, *bias)?;
                let probs = tape.softmax_rows(scores)?;
                heads.push(tape.matmul(probs, vh)?);
            }
            per_example.push(tape.concat_cols(&heads)?);
        }
        let ctx = tape.concat_rows(&per_example)?;
        self.linear(tape, binder, ctx, &format!("{pre}.wo"), &format!("{pre}.bo"))
    }

    /// Runs the encoder over `batch` and returns final states `[B·T × H]`
    /// (row `b·T + t`) together with per-layer activations for the
    /// orthogonality loss.
    pub fn encode(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        batch: &TokenBatch,
        opts: EncodeOptions,
    ) -> Result<(Var, LayerActivations)> {
        self.check_batch(batch)?;
        let mut rng = opts.dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let t = batch.len;

        let tok = binder.var(tape, &self.params, "emb.tok")?;
        let pos = binder.var(tape, &self.params, "emb.pos")?;
        let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..t).collect();
        let te = tape.gather_rows(tok, &ids)?;
        let pe = tape.gather_rows(pos, &positions)?;
        let seg = binder.var(tape, &self.params, "emb.seg")?;
        let se = tape.gather_rows(seg, &batch.segments())?;
        let x = tape.add(te, pe)?;
        let x = tape.add(x, se)?;
        let x = self.layer_norm(tape, binder, x, "emb.ln")?;
        let mut x = self.dropout(tape, x, &mut rng)?;

        let mask_bias: Vec<Var> = (0..batch.batch)
            .map(|b| {
                let row: Vec<f64> = batch.mask[b * t..(b + 1) * t]
                    .iter()
                    .map(|&m| if m { 0.0 } else { MASK_BIAS })
                    .collect();
                let full: Vec<f64> = (0..t).flat_map(|_| row.iter().copied()).collect();
                tape.constant(Tensor::new(vec![t, t], full).expect("t×t"))
            })
            .collect();

        let mut layers = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let attn = self.attention(tape, binder, x, l, batch, &mask_bias)?;
            let attn = self.dropout(tape, attn, &mut rng)?;
            let res = tape.add(x, attn)?;
            let x1 = self.layer_norm(tape, binder, res, &format!("layer.{l}.ln1"))?;

            let f = self.linear(tape, binder, x1, &format!("layer.{l}.ffn.w1"), &format!("layer.{l}.ffn.b1"))?;
            let f = tape.gelu(f);
            let f = self.linear(tape, binder, f, &format!("layer.{l}.ffn.w2"), &format!("layer.{l}.ffn.b2"))?;
            let f = self.dropout(tape, f, &mut rng)?;
            let z = tape.add(x1, f)?;

            let ln2 = format!("layer.{l}.ln2");
            let hidden = if self.config.adapter_pre_norm {
                z
            } else {
                self.layer_norm(tape, binder, z, &ln2)?
            };
            let mut record = LayerRecord {
                hidden,
                lang: None,
                task: None,
            };
            let mut s = hidden;
            for kind in [AdapterKind::Language, AdapterKind::Task] {
                let Some(cfg) = self.stack.slot(kind) else { continue };
                let input = if opts.detach_slot_input == Some(kind) {
                    tape.detach(s)
                } else {
                    s
                };
                let wd = binder.var(tape, &self.params, &kind.param_name(l, "w_down"))?;
                let wu = binder.var(tape, &self.params, &kind.param_name(l, "w_up"))?;
                let (delta, output) = adapter_forward(tape, input, input, wd, wu, cfg.residual)?;
                let act = SlotActivation {
                    input,
                    delta,
                    output,
                };
                match kind {
                    AdapterKind::Language => record.lang = Some(act),
                    AdapterKind::Task => record.task = Some(act),
                }
                s = output;
            }
            x = if self.config.adapter_pre_norm {
                self.layer_norm(tape, binder, s, &ln2)?
            } else {
                s
            };
            layers.push(record);
        }
        Ok((
            x,
            LayerActivations {
                layers,
                mask: batch.mask.clone(),
            },
        ))
    }

    /// Vocabulary logits for the given rows of `states`.
    pub fn mlm_logits(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        states: Var,
        rows: &[usize],
    ) -> Result<Var> {
        let x = tape.gather_rows(states, rows)?;
        let w = if self.config.tied_embeddings {
            let e = binder.var(tape, &self.params, "emb.tok")?;
            tape.transpose(e)?
        } else {
            binder.var(tape, &self.params, "mlm.w_out")?
        };
        let bias = binder.var(tape, &self.params, "mlm.bias")?;
        let y = tape.matmul(x, w)?;
        tape.add_row(y, bias)
    }

    /// `[B × C]` logits from a tanh pooler over the masked mean of the states.
    pub fn cls_logits(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        states: Var,
        batch: &TokenBatch,
    ) -> Result<Var> {
        self.require_head(TaskKind::SeqCls)?;
        // Masked mean over each example's real positions: `[B × B·T] · states`.
        let t = batch.len;
        let mut weights = vec![0.0; batch.batch * batch.batch * t];
        for b in 0..batch.batch {
            let row = &batch.mask[b * t..(b + 1) * t];
            let n = row.iter().filter(|&&m| m).count().max(1) as f64;
            for (i, _) in row.iter().enumerate().filter(|(_, &m)| m) {
                weights[b * batch.batch * t + b * t + i] = 1.0 / n;
            }
        }
        let pool = tape.constant(Tensor::matrix(batch.batch, batch.batch * t, weights)?);
        let mean = tape.matmul(pool, states)?;
        let pooled = self.linear(tape, binder, mean, "head.cls.wp", "head.cls.bp")?;
        let pooled = tape.tanh(pooled);
        self.linear(tape, binder, pooled, "head.cls.wc", "head.cls.bc")
    }

    /// `[B·T × C]` per-position tag logits.
    pub fn tag_logits(&self, tape: &mut Tape, binder: &mut Binder, states: Var) -> Result<Var> {
        self.require_head(TaskKind::Tagging)?;
        self.linear(tape, binder, states, "head.tag.w", "head.tag.b")
    }

    fn require_head(&self, kind: TaskKind) -> Result<()> {
        match self.head {
            Some(h) if h.kind == kind => Ok(()),
            _ => Err(Error::Structural(format!("model has no {kind} head"))),
        }
    }

    /// Bytes of all backbone parameters, for freeze checks.
    pub fn backbone_bytes(&self) -> Vec<u8> {
        self.params.bytes_where(is_backbone_param)
    }
}
