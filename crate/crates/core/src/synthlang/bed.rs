//! The complete synthetic test bed: vocabulary, languages, monolingual
//! corpora, the backbone pretraining mix, and task splits.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::{ClassGrammar, CorpusSource, GrammarConfig};
use super::language::{Language, LanguageSpec};
use super::tasks::{gen_seq_task, gen_tag_task, split_sentences, Split, TaskDataset, TaskKind};
use super::vocab::{Vocab, NUM_RESERVED, SEP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BedConfig {
    pub grammar: GrammarConfig,
    /// Monolingual sentences per language (language-adapter corpora).
    pub mono_sentences: usize,
    /// Share of each target-language corpus that enters backbone pretraining;
    /// the source corpus always enters in full.
    pub pretrain_target_share: f64,
    /// Fraction of pretraining sentences joined into `s1 [SEP] s2` pairs, so
    /// the backbone sees both segments before any pair task.
    pub pretrain_pair_share: f64,
    /// Same, for the language-adapter training corpora.
    pub adapter_pair_share: f64,
    /// Base sentences drawn for task data before splitting.
    pub task_sentences: usize,
    pub seq_train: usize,
    pub seq_eval: usize,
    /// Minimum length difference of unequal sequence-task pairs.
    pub seq_margin: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub source: LanguageSpec,
    pub targets: Vec<LanguageSpec>,
    pub seed: u64,
}

impl Default for BedConfig {
    fn default() -> Self {
        BedConfig {
            grammar: GrammarConfig::default(),
            mono_sentences: 3000,
            pretrain_target_share: 0.25,
            pretrain_pair_share: 0.5,
            adapter_pair_share: 0.5,
            task_sentences: 1600,
            seq_train: 1200,
            seq_eval: 300,
            seq_margin: 3,
            dev_fraction: 0.15,
            test_fraction: 0.25,
            source: LanguageSpec::identity("src"),
            targets: vec![LanguageSpec {
                code: "tgt".into(),
                cipher_seed: 101,
                order: super::language::WordOrder::Identity,
                divergence: 0.5,
            }],
            seed: 2024,
        }
    }
}

impl BedConfig {
    pub fn vocab_size(&self) -> usize {
        self.grammar.words + NUM_RESERVED
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageSpec> {
        std::iter::once(&self.source).chain(self.targets.iter())
    }

    pub fn validate(&self) -> Result<()> {
        let mut codes = std::collections::BTreeSet::new();
        for l in self.languages() {
            l.validate()?;
            if !codes.insert(l.code.as_str()) {
                return Err(Error::Config(format!("duplicate language `{}`", l.code)));
            }
        }
        if !(0.0..=1.0).contains(&self.pretrain_pair_share) {
            return Err(Error::Config("pretrain_pair_share outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.adapter_pair_share) {
            return Err(Error::Config("adapter_pair_share outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.pretrain_target_share) {
            return Err(Error::Config("pretrain_target_share outside [0, 1]".into()));
        }
        if self.dev_fraction + self.test_fraction >= 1.0 {
            return Err(Error::Config("dev + test fractions must leave training data".into()));
        }
        Ok(())
    }
}

/// Joins the leading `pair_share` of `sentences` into `s1 [SEP] s2` pairs
/// (consecutive sentences) and keeps the rest as they are.
fn join_pairs(sentences: &[Vec<u32>], pair_share: f64) -> Vec<Vec<u32>> {
    let pairs = (sentences.len() as f64 * pair_share / 2.0).round() as usize;
    let mut out: Vec<Vec<u32>> = sentences[..2 * pairs]
        .chunks(2)
        .map(|p| {
            let mut joined = p[0].clone();
            joined.push(SEP);
            joined.extend(&p[1]);
            joined
        })
        .collect();
    out.extend(sentences[2 * pairs..].iter().cloned());
    out
}

/// Train/dev data in the source language plus a test split per language.
#[derive(Debug, Clone)]
pub struct TaskSplits {
    pub train: TaskDataset,
    pub dev: TaskDataset,
    pub test: BTreeMap<String, TaskDataset>,
}

#[derive(Debug, Clone)]
pub struct Bed {
    pub config: BedConfig,
    pub vocab: Vocab,
    /// Source first, then targets in configuration order.
    pub languages: Vec<Language>,
    pub mono: BTreeMap<String, Vec<Vec<u32>>>,
    pub pretrain: Vec<Vec<u32>>,
    pub tasks: BTreeMap<TaskKind, TaskSplits>,
}

impl Bed {
    pub fn generate(config: &BedConfig) -> Result<Bed> {
        config.validate()?;
        let grammar = ClassGrammar::new(config.grammar.clone())?;
        let vocab = Vocab::with_words(grammar.words().iter().cloned());
        let languages: Vec<Language> = config
            .languages()
            .map(|s| s.realize(vocab.len()))
            .collect();

        let mut mono = BTreeMap::new();
        let mut pretrain = Vec::new();
        for (i, lang) in languages.iter().enumerate() {
            let lines = grammar.sentences(config.mono_sentences, config.seed ^ (1000 + i as u64))?;
            let ids: Vec<Vec<u32>> = lines.iter().map(|l| lang.apply(&vocab.encode(l))).collect();
            let share = if i == 0 {
                ids.len()
            } else {
                (ids.len() as f64 * config.pretrain_target_share).round() as usize
            };
            pretrain.extend(join_pairs(&ids[..share], config.pretrain_pair_share));
            mono.insert(lang.code().to_string(), ids);
        }
        pretrain.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed));

        let task_lines = grammar.sentences(config.task_sentences, config.seed ^ 0x7a5c)?;
        let task_ids: Vec<Vec<u32>> = task_lines.iter().map(|l| vocab.encode(l)).collect();
        let (train_s, dev_s, test_s) =
            split_sentences(&task_ids, config.dev_fraction, config.test_fraction, config.seed);
        let source = &languages[0];

        let mut tasks = BTreeMap::new();
        let classes = config.grammar.classes;
        let base = LanguageSpec::identity("base").realize(vocab.len());
        let tag_test_base = gen_tag_task(&test_s, &vocab, classes, &base, Split::Test);
        tasks.insert(
            TaskKind::Tagging,
            TaskSplits {
                train: gen_tag_task(&train_s, &vocab, classes, source, Split::Train),
                dev: gen_tag_task(&dev_s, &vocab, classes, source, Split::Dev),
                test: languages
                    .iter()
                    .map(|l| (l.code().to_string(), tag_test_base.translate(l)))
                    .collect(),
            },
        );
        let seq_test_base = gen_seq_task(
            &test_s,
            &base,
            config.seq_eval,
            config.seq_margin,
            Split::Test,
            config.seed ^ 3,
        )?;
        tasks.insert(
            TaskKind::SeqCls,
            TaskSplits {
                train: gen_seq_task(&train_s, source, config.seq_train, config.seq_margin, Split::Train, config.seed ^ 1)?,
                dev: gen_seq_task(&dev_s, source, config.seq_eval, config.seq_margin, Split::Dev, config.seed ^ 2)?,
                test: languages
                    .iter()
                    .map(|l| (l.code().to_string(), seq_test_base.translate(l)))
                    .collect(),
            },
        );

        Ok(Bed {
            config: config.clone(),
            vocab,
            languages,
            mono,
            pretrain,
            tasks,
        })
    }

    pub fn source(&self) -> &Language {
        &self.languages[0]
    }

    pub fn language(&self, code: &str) -> Result<&Language> {
        self.languages
            .iter()
            .find(|l| l.code() == code)
            .ok_or_else(|| Error::Config(format!("unknown language `{code}`")))
    }

    /// Language-adapter training corpus: the language's monolingual text
    /// with `adapter_pair_share` of it joined into pairs.
    pub fn adapter_corpus(&self, code: &str) -> Result<Vec<Vec<u32>>> {
        let mono = self
            .mono
            .get(code)
            .ok_or_else(|| Error::Config(format!("unknown language `{code}`")))?;
        Ok(join_pairs(mono, self.config.adapter_pair_share))
    }

    pub fn task(&self, kind: TaskKind) -> &TaskSplits {
        &self.tasks[&kind]
    }

    /// Writes vocabulary, language specs, corpora and task files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("vocab.txt"), self.vocab.tokens().join("\n") + "\n")?;
        for lang in &self.languages {
            let code = lang.code();
            lang.spec.save(&dir.join(format!("lang.{code}.spec")))?;
            let text: String = self.mono[code]
                .iter()
                .map(|s| self.vocab.decode(s) + "\n")
                .collect();
            std::fs::write(dir.join(format!("corpus.{code}.txt")), text)?;
        }
        let text: String = self
            .pretrain
            .iter()
            .map(|s| self.vocab.decode(s) + "\n")
            .collect();
        std::fs::write(dir.join("corpus.pretrain.txt"), text)?;
        for (kind, splits) in &self.tasks {
            let src = self.source().code();
            splits
                .train
                .write(&dir.join(format!("{kind}.train.{src}.tsv")), &self.vocab)?;
            splits
                .dev
                .write(&dir.join(format!("{kind}.dev.{src}.tsv")), &self.vocab)?;
            for (code, test) in &splits.test {
                test.write(&dir.join(format!("{kind}.test.{code}.tsv")), &self.vocab)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BedConfig {
        BedConfig {
            mono_sentences: 200,
            task_sentences: 300,
            seq_train: 90,
            seq_eval: 30,
            ..BedConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Bed::generate(&small()).unwrap();
        let b = Bed::generate(&small()).unwrap();
        assert_eq!(a.pretrain, b.pretrain);
        for kind in [TaskKind::SeqCls, TaskKind::Tagging] {
            for (code, t) in &a.task(kind).test {
                assert_eq!(t.content_hash(), b.task(kind).test[code].content_hash());
            }
        }
    }

    #[test]
    fn test_sets_are_parallel_across_languages() {
        let bed = Bed::generate(&small()).unwrap();
        let tag = bed.task(TaskKind::Tagging);
        let src = &tag.test["src"];
        let tgt = &tag.test["tgt"];
        assert_eq!(src.len(), tgt.len());
        assert_eq!(src.label_distribution(), tgt.label_distribution());
        assert_ne!(src.content_hash(), tgt.content_hash());
    }

    #[test]
    fn pretraining_mix_underweights_targets() {
        let bed = Bed::generate(&BedConfig {
            pretrain_pair_share: 0.0,
            ..small()
        })
        .unwrap();
        assert_eq!(bed.pretrain.len(), 200 + 50);
        assert!(bed.pretrain.iter().all(|s| !s.contains(&SEP)));
    }

    #[test]
    fn adapter_corpus_uses_the_pair_share() {
        let bed = Bed::generate(&small()).unwrap();
        let corpus = bed.adapter_corpus("tgt").unwrap();
        assert_eq!(corpus.len(), 150);
        assert_eq!(corpus.iter().filter(|s| s.contains(&SEP)).count(), 50);
        assert_eq!(corpus[60], bed.mono["tgt"][110]);
        assert!(bed.adapter_corpus("nope").is_err());
    }

    #[test]
    fn pretraining_pairs_join_two_sentences() {
        let bed = Bed::generate(&small()).unwrap();
        // src: 50 pairs + 100 singles; tgt: 13 pairs + 24 singles.
        assert_eq!(bed.pretrain.len(), 150 + 37);
        let pairs: Vec<_> = bed.pretrain.iter().filter(|s| s.contains(&SEP)).collect();
        assert_eq!(pairs.len(), 63);
        for p in pairs {
            assert_eq!(p.iter().filter(|&&t| t == SEP).count(), 1);
            assert_ne!(p[0], SEP);
            assert_ne!(*p.last().unwrap(), SEP);
        }
    }

    #[test]
    fn writes_files() {
        let bed = Bed::generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bed.write(dir.path()).unwrap();
        for f in ["vocab.txt", "lang.tgt.spec", "corpus.src.txt", "tag.test.tgt.tsv", "seq.train.src.tsv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
