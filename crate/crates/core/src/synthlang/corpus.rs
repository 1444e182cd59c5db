//! Base corpora: a class-based Zipfian generator and plain-text files, both
//! served through [`CorpusSource`].

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Stable 64-bit FNV-1a.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Tag class of a base-language word: a hash bucket of its surface form.
pub fn tag_bucket(word: &str, classes: usize) -> usize {
    (fnv1a(word) % classes as u64) as usize
}

pub trait CorpusSource {
    /// `n` sentences, one whitespace-tokenised sentence per entry.
    fn sentences(&self, n: usize, seed: u64) -> Result<Vec<String>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrammarConfig {
    pub words: usize,
    pub classes: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            words: 120,
            classes: 5,
            min_len: 4,
            max_len: 10,
            zipf_exponent: 1.0,
            seed: 7,
        }
    }
}

/// Class bigram grammar: every word belongs to the class given by
/// [`tag_bucket`], classes follow a seeded Markov chain, and words are drawn
/// Zipf-distributed within their class.
#[derive(Debug, Clone)]
pub struct ClassGrammar {
    config: GrammarConfig,
    words: Vec<String>,
    by_class: Vec<Vec<usize>>,
    emission: Vec<WeightedIndex<f64>>,
    transition: Vec<WeightedIndex<f64>>,
    start: WeightedIndex<f64>,
}

impl ClassGrammar {
    pub fn new(config: GrammarConfig) -> Result<Self> {
        if config.classes < 2 || config.words < config.classes {
            return Err(Error::Config(format!(
                "grammar needs at least 2 classes and one word per class (words={}, classes={})",
                config.words, config.classes
            )));
        }
        if config.min_len == 0 || config.min_len > config.max_len {
            return Err(Error::Config(format!(
                "bad sentence length range {}..={}",
                config.min_len, config.max_len
            )));
        }
        let words: Vec<String> = (0..config.words).map(|i| format!("w{i:03}")).collect();
        let mut by_class = vec![Vec::new(); config.classes];
        for (i, w) in words.iter().enumerate() {
            by_class[tag_bucket(w, config.classes)].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("grammar class {c} has no words")));
        }
        let emission = by_class
            .iter()
            .map(|members| {
                let w: Vec<f64> = (0..members.len())
                    .map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent))
                    .collect();
                WeightedIndex::new(w).expect("positive weights")
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.classes;
        let transition = (0..k)
            .map(|_| {
                let mut w = vec![0.2 / k as f64; k];
                let mut order: Vec<usize> = (0..k).collect();
                order.shuffle(&mut rng);
                w[order[0]] += 0.5;
                w[order[1]] += 0.3;
                WeightedIndex::new(w).expect("positive weights")
            })
            .collect();
        let start_w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
        let start = WeightedIndex::new(start_w).expect("positive weights");
        Ok(ClassGrammar {
            config,
            words,
            by_class,
            emission,
            transition,
            start,
        })
    }

    pub fn config(&self) -> &GrammarConfig {
        &self.config
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn sample_sentence<R: Rng>(&self, rng: &mut R) -> String {
        let len = rng.gen_range(self.config.min_len..=self.config.max_len);
        let mut class = self.start.sample(rng);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let w = self.by_class[class][self.emission[class].sample(rng)];
            out.push(self.words[w].as_str());
            class = self.transition[class].sample(rng);
        }
        out.join(" ")
    }
}

impl CorpusSource for ClassGrammar {
    fn sentences(&self, n: usize, seed: u64) -> Result<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| self.sample_sentence(&mut rng)).collect())
    }
}

/// UTF-8 text, one sentence per line; blank lines are skipped.
#[derive(Debug, Clone)]
pub struct TextCorpus {
    lines: Vec<String>,
}

impl TextCorpus {
    pub fn from_lines(lines: Vec<String>) -> Self {
        TextCorpus {
            lines: lines
                .into_iter()
                .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
                .filter(|l| !l.is_empty())
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(TextCorpus::from_lines(text.lines().map(str::to_string).collect()))
    }
}

impl CorpusSource for TextCorpus {
    /// Cycles through a seeded shuffle of the lines.
    fn sentences(&self, n: usize, seed: u64) -> Result<Vec<String>> {
        if self.lines.is_empty() {
            return Err(Error::Config("text corpus is empty".into()));
        }
        let mut order: Vec<usize> = (0..self.lines.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(order
            .iter()
            .cycle()
            .take(n)
            .map(|&i| self.lines[i].clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_is_deterministic() {
        let g = ClassGrammar::new(GrammarConfig::default()).unwrap();
        assert_eq!(g.sentences(50, 3).unwrap(), g.sentences(50, 3).unwrap());
        assert_ne!(g.sentences(50, 3).unwrap(), g.sentences(50, 4).unwrap());
    }

    #[test]
    fn sentence_lengths_in_range() {
        let cfg = GrammarConfig::default();
        let g = ClassGrammar::new(cfg.clone()).unwrap();
        for s in g.sentences(200, 1).unwrap() {
            let n = s.split_whitespace().count();
            assert!((cfg.min_len..=cfg.max_len).contains(&n));
        }
    }

    #[test]
    fn every_word_emits_its_bucket_class() {
        let cfg = GrammarConfig::default();
        let g = ClassGrammar::new(cfg.clone()).unwrap();
        for (c, members) in g.by_class.iter().enumerate() {
            for &w in members {
                assert_eq!(tag_bucket(&g.words[w], cfg.classes), c);
            }
        }
    }

    #[test]
    fn text_corpus_cycles() {
        let c = TextCorpus::from_lines(vec!["a  b".into(), "".into(), "c".into()]);
        let s = c.sentences(5, 0).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|l| l == "a b" || l == "c"));
    }
}
