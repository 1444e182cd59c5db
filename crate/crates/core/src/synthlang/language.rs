//! Synthetic languages: a seeded vocabulary cipher plus a word-order rule.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{is_reserved, NUM_RESERVED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordOrder {
    Identity,
    Reverse,
    /// Left rotation by `k` positions.
    Rotate(usize),
}

impl WordOrder {
    fn apply<T: Clone>(self, run: &mut [T]) {
        match self {
            WordOrder::Identity => {}
            WordOrder::Reverse => run.reverse(),
            WordOrder::Rotate(k) => {
                if !run.is_empty() {
                    let k = k % run.len();
                    run.rotate_left(k);
                }
            }
        }
    }

    fn invert<T: Clone>(self, run: &mut [T]) {
        match self {
            WordOrder::Identity => {}
            WordOrder::Reverse => run.reverse(),
            WordOrder::Rotate(k) => {
                if !run.is_empty() {
                    let k = k % run.len();
                    run.rotate_right(k);
                }
            }
        }
    }
}

impl fmt::Display for WordOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WordOrder::Identity => write!(f, "identity"),
            WordOrder::Reverse => write!(f, "reverse"),
            WordOrder::Rotate(k) => write!(f, "rotate-{k}"),
        }
    }
}

impl FromStr for WordOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(WordOrder::Identity),
            "reverse" => Ok(WordOrder::Reverse),
            _ => s
                .strip_prefix("rotate-")
                .and_then(|k| k.parse().ok())
                .map(WordOrder::Rotate)
                .ok_or_else(|| Error::Config(format!("unknown word order `{s}`"))),
        }
    }
}

/// Description of one synthetic language. The cipher is reproducible from
/// `cipher_seed`, `divergence` and the vocabulary size alone.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpec {
    pub code: String,
    pub cipher_seed: u64,
    pub order: WordOrder,
    /// Fraction of non-reserved vocabulary ids the cipher remaps.
    pub divergence: f64,
}

impl LanguageSpec {
    /// The untransformed base language.
    pub fn identity(code: impl Into<String>) -> Self {
        LanguageSpec {
            code: code.into(),
            cipher_seed: 0,
            order: WordOrder::Identity,
            divergence: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.divergence) {
            return Err(Error::Config(format!(
                "language {}: divergence {} outside [0, 1]",
                self.code, self.divergence
            )));
        }
        if self.code.is_empty() || self.code.contains(|c: char| c.is_whitespace() || c == '\t') {
            return Err(Error::Config(format!("bad language code `{}`", self.code)));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "code={}\ncipher_seed={}\norder={}\ndivergence={}\n",
            self.code, self.cipher_seed, self.order, self.divergence
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "language spec".into(),
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| {
            kv.remove(k)
                .ok_or_else(|| Error::Config(format!("language spec is missing `{k}`")))
        };
        let spec = LanguageSpec {
            code: take("code")?,
            cipher_seed: take("cipher_seed")?
                .parse()
                .map_err(|e| Error::Config(format!("cipher_seed: {e}")))?,
            order: take("order")?.parse()?,
            divergence: take("divergence")?
                .parse()
                .map_err(|e| Error::Config(format!("divergence: {e}")))?,
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown language spec key `{k}`")));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_key_values())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        LanguageSpec::parse(&std::fs::read_to_string(path)?)
    }

    pub fn cipher(&self, vocab_size: usize) -> Cipher {
        Cipher::new(vocab_size, self.divergence, self.cipher_seed)
    }

    pub fn realize(&self, vocab_size: usize) -> Language {
        Language {
            spec: self.clone(),
            cipher: self.cipher(vocab_size),
        }
    }
}

/// Bijection over vocabulary ids that fixes the reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cipher {
    forward: Vec<u32>,
    inverse: Vec<u32>,
}

impl Cipher {
    /// Picks `round(divergence · n)` non-reserved ids with a seeded shuffle and
    /// rotates them one step along that order, so every picked id moves.
    pub fn new(vocab_size: usize, divergence: f64, seed: u64) -> Self {
        let mut forward: Vec<u32> = (0..vocab_size as u32).collect();
        let mut pool: Vec<u32> = (NUM_RESERVED as u32..vocab_size as u32).collect();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = (divergence * pool.len() as f64).round() as usize;
        let picked = &pool[..k.min(pool.len())];
        if picked.len() > 1 {
            for (i, &src) in picked.iter().enumerate() {
                forward[src as usize] = picked[(i + 1) % picked.len()];
            }
        }
        let mut inverse = vec![0; vocab_size];
        for (i, &f) in forward.iter().enumerate() {
            inverse[f as usize] = i as u32;
        }
        Cipher { forward, inverse }
    }

    pub fn identity(vocab_size: usize) -> Self {
        Cipher::new(vocab_size, 0.0, 0)
    }

    pub fn encode(&self, id: u32) -> u32 {
        self.forward.get(id as usize).copied().unwrap_or(id)
    }

    pub fn decode(&self, id: u32) -> u32 {
        self.inverse.get(id as usize).copied().unwrap_or(id)
    }

    /// Measured fraction of non-reserved ids that the cipher moves.
    pub fn divergence(&self) -> f64 {
        let n = self.forward.len().saturating_sub(NUM_RESERVED);
        if n == 0 {
            return 0.0;
        }
        let moved = (NUM_RESERVED..self.forward.len())
            .filter(|&i| self.forward[i] as usize != i)
            .count();
        moved as f64 / n as f64
    }

    /// Among non-reserved ids moved by either cipher, the fraction both send
    /// to the same surface id.
    pub fn overlap(&self, other: &Cipher) -> f64 {
        let n = self.forward.len().min(other.forward.len());
        let mut moved = 0usize;
        let mut same = 0usize;
        for i in NUM_RESERVED..n {
            let (a, b) = (self.forward[i], other.forward[i]);
            if a as usize != i || b as usize != i {
                moved += 1;
                if a == b {
                    same += 1;
                }
            }
        }
        if moved == 0 {
            0.0
        } else {
            same as f64 / moved as f64
        }
    }
}

/// A language spec with its cipher materialised for a given vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Language {
    pub spec: LanguageSpec,
    pub cipher: Cipher,
}

impl Language {
    pub fn code(&self) -> &str {
        &self.spec.code
    }

    /// Ciphers non-reserved ids and reorders every maximal run of them.
    pub fn apply(&self, ids: &[u32]) -> Vec<u32> {
        let mut out: Vec<u32> = ids.iter().map(|&i| self.cipher.encode(i)).collect();
        for_each_run(&out.clone(), |s, e| self.spec.order.apply(&mut out[s..e]));
        out
    }

    pub fn invert(&self, ids: &[u32]) -> Vec<u32> {
        let mut out = ids.to_vec();
        for_each_run(ids, |s, e| self.spec.order.invert(&mut out[s..e]));
        out.iter().map(|&i| self.cipher.decode(i)).collect()
    }

    /// Like [`Language::apply`], carrying a per-token payload through the reordering.
    pub fn apply_aligned<T: Clone>(&self, ids: &[u32], payload: &[T]) -> (Vec<u32>, Vec<T>) {
        let mut pairs: Vec<(u32, T)> = ids
            .iter()
            .map(|&i| self.cipher.encode(i))
            .zip(payload.iter().cloned())
            .collect();
        for_each_run(ids, |s, e| self.spec.order.apply(&mut pairs[s..e]));
        pairs.into_iter().unzip()
    }
}

fn for_each_run(ids: &[u32], mut f: impl FnMut(usize, usize)) {
    let mut start = None;
    for (i, &id) in ids.iter().enumerate() {
        match (is_reserved(id), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                f(s, i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        f(s, ids.len());
    }
}
