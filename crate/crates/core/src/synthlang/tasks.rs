//! Labelled task data whose gold labels survive every language transform.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::corpus::tag_bucket;
use super::language::Language;
use super::vocab::{hex, is_reserved, Vocab, CLS, SEP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    /// Sentence-pair classification (the NLI role).
    SeqCls,
    /// Token tagging (the POS/NER role).
    Tagging,
}

impl TaskKind {
    pub fn id(self) -> &'static str {
        match self {
            TaskKind::SeqCls => "seq",
            TaskKind::Tagging => "tag",
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::SeqCls => "accuracy",
            TaskKind::Tagging => "token-f1",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq" | "seq_cls" => Ok(TaskKind::SeqCls),
            "tag" | "tagging" => Ok(TaskKind::Tagging),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Sentence-pair length relation, the default sequence rule.
pub const SEQ_LABELS: [&str; 3] = ["first-longer", "second-longer", "equal"];

pub fn length_relation(first: usize, second: usize) -> usize {
    match first.cmp(&second) {
        std::cmp::Ordering::Greater => 0,
        std::cmp::Ordering::Less => 1,
        std::cmp::Ordering::Equal => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeqExample {
    pub first: Vec<u32>,
    pub second: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TagExample {
    pub tokens: Vec<u32>,
    pub tags: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskExamples {
    Seq(Vec<SeqExample>),
    Tag(Vec<TagExample>),
}

/// What the model is asked to predict for one input sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    /// Aligned with the model input; `None` on `[CLS]`, `[SEP]` and padding.
    Tags(Vec<Option<usize>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDataset {
    pub kind: TaskKind,
    pub split: Split,
    pub language: String,
    pub num_labels: usize,
    pub examples: TaskExamples,
}

/// Tag of every vocabulary id under the hash-bucket rule (`None` for reserved ids).
pub fn tag_table(vocab: &Vocab, classes: usize) -> Vec<Option<usize>> {
    (0..vocab.len() as u32)
        .map(|id| (!is_reserved(id)).then(|| tag_bucket(vocab.token(id), classes)))
        .collect()
}

/// Train, dev and test sentences.
pub type SentenceSplits = (Vec<Vec<u32>>, Vec<Vec<u32>>, Vec<Vec<u32>>);

/// Deduplicates and partitions sentences so no sentence appears in two splits.
pub fn split_sentences(sentences: &[Vec<u32>], dev_fraction: f64, test_fraction: f64, seed: u64) -> SentenceSplits {
    let unique: BTreeSet<&Vec<u32>> = sentences.iter().collect();
    let mut all: Vec<Vec<u32>> = unique.into_iter().cloned().collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = all.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_dev = (n as f64 * dev_fraction).round() as usize;
    let test = all.split_off(n - n_test);
    let dev = all.split_off(all.len() - n_dev);
    (all, dev, test)
}

/// Balanced three-class pairs labelled by [`length_relation`], built from
/// base-language sentences and then rendered in `lang`.
///
/// Unequal pairs differ in length by at least `margin` tokens.
pub fn gen_seq_task(
    sentences: &[Vec<u32>],
    lang: &Language,
    n: usize,
    margin: usize,
    split: Split,
    seed: u64,
) -> Result<TaskDataset> {
    let mut by_len: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, s) in sentences.iter().enumerate() {
        by_len.entry(s.len()).or_default().push(i);
    }
    let mut lengths: Vec<usize> = by_len.keys().copied().collect();
    lengths.sort_unstable();
    let margin = margin.max(1);
    if lengths.len() < 2 || lengths[lengths.len() - 1] - lengths[0] < margin {
        return Err(Error::Config(format!(
            "sequence task needs sentence lengths at least {margin} apart"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 3;
        // pick a first length that admits the requested relation
        let firsts: Vec<usize> = lengths
            .iter()
            .copied()
            .filter(|&l| match label {
                0 => l >= lengths[0] + margin,
                1 => l + margin <= lengths[lengths.len() - 1],
                _ => true,
            })
            .collect();
        let l1 = *firsts.choose(&mut rng).expect("non-empty by construction");
        let seconds: Vec<usize> = lengths
            .iter()
            .copied()
            .filter(|&l| length_relation(l1, l) == label && (label == 2 || l1.abs_diff(l) >= margin))
            .collect();
        let l2 = *seconds.choose(&mut rng).expect("non-empty by construction");
        let first = sentences[*by_len[&l1].choose(&mut rng).unwrap()].clone();
        let second = sentences[*by_len[&l2].choose(&mut rng).unwrap()].clone();
        examples.push(SeqExample {
            first,
            second,
            label,
        });
    }
    examples.shuffle(&mut rng);
    let base = TaskDataset {
        kind: TaskKind::SeqCls,
        split,
        language: String::new(),
        num_labels: 3,
        examples: TaskExamples::Seq(examples),
    };
    Ok(base.translate(lang))
}

/// One tagging example per base sentence; each token's tag is the hash bucket
/// of its base-language identity.
pub fn gen_tag_task(
    sentences: &[Vec<u32>],
    vocab: &Vocab,
    classes: usize,
    lang: &Language,
    split: Split,
) -> TaskDataset {
    let table = tag_table(vocab, classes);
    let examples = sentences
        .iter()
        .map(|s| TagExample {
            tokens: s.clone(),
            tags: s
                .iter()
                .map(|&id| table[id as usize].unwrap_or(0))
                .collect(),
        })
        .collect();
    let base = TaskDataset {
        kind: TaskKind::Tagging,
        split,
        language: String::new(),
        num_labels: classes,
        examples: TaskExamples::Tag(examples),
    };
    base.translate(lang)
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        match &self.examples {
            TaskExamples::Seq(e) => e.len(),
            TaskExamples::Tag(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Renders a base-language dataset in `lang`. Labels are untouched; tags
    /// follow their tokens through the word-order transform.
    pub fn translate(&self, lang: &Language) -> TaskDataset {
        let examples = match &self.examples {
            TaskExamples::Seq(ex) => TaskExamples::Seq(
                ex.iter()
                    .map(|e| SeqExample {
                        first: lang.apply(&e.first),
                        second: lang.apply(&e.second),
                        label: e.label,
                    })
                    .collect(),
            ),
            TaskExamples::Tag(ex) => TaskExamples::Tag(
                ex.iter()
                    .map(|e| {
                        let (tokens, tags) = lang.apply_aligned(&e.tokens, &e.tags);
                        TagExample { tokens, tags }
                    })
                    .collect(),
            ),
        };
        TaskDataset {
            kind: self.kind,
            split: self.split,
            language: lang.code().to_string(),
            num_labels: self.num_labels,
            examples,
        }
    }

    pub fn label_distribution(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_labels];
        match &self.examples {
            TaskExamples::Seq(ex) => ex.iter().for_each(|e| counts[e.label] += 1),
            TaskExamples::Tag(ex) => ex
                .iter()
                .flat_map(|e| &e.tags)
                .for_each(|t| counts[*t] += 1),
        }
        counts
    }

    /// `(model input ids, target)` for every example, in order.
    pub fn model_inputs(&self) -> Vec<(Vec<u32>, Target)> {
        match &self.examples {
            TaskExamples::Seq(ex) => ex
                .iter()
                .map(|e| {
                    let mut ids = Vec::with_capacity(e.first.len() + e.second.len() + 2);
                    ids.push(CLS);
                    ids.extend(&e.first);
                    ids.push(SEP);
                    ids.extend(&e.second);
                    (ids, Target::Class(e.label))
                })
                .collect(),
            TaskExamples::Tag(ex) => ex
                .iter()
                .map(|e| {
                    let mut ids = Vec::with_capacity(e.tokens.len() + 1);
                    ids.push(CLS);
                    ids.extend(&e.tokens);
                    let mut tags = Vec::with_capacity(ids.len());
                    tags.push(None);
                    tags.extend(e.tags.iter().map(|t| Some(*t)));
                    (ids, Target::Tags(tags))
                })
                .collect(),
        }
    }

    /// Hex SHA-256 of the examples, used to pin test splits across runs.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.id().as_bytes());
        for (ids, target) in self.model_inputs() {
            for id in ids {
                h.update(id.to_le_bytes());
            }
            match target {
                Target::Class(c) => h.update((c as u64).to_le_bytes()),
                Target::Tags(t) => {
                    for x in t {
                        h.update(x.map_or(u64::MAX, |v| v as u64).to_le_bytes());
                    }
                }
            }
            h.update([0xff]);
        }
        hex(&h.finalize())
    }

    fn label_name(&self, label: usize) -> String {
        match self.kind {
            TaskKind::SeqCls => SEQ_LABELS[label].to_string(),
            TaskKind::Tagging => format!("T{label}"),
        }
    }

    fn parse_label(&self, s: &str) -> Option<usize> {
        match self.kind {
            TaskKind::SeqCls => SEQ_LABELS.iter().position(|l| *l == s),
            TaskKind::Tagging => s
                .strip_prefix('T')
                .and_then(|n| n.parse().ok())
                .filter(|n| *n < self.num_labels),
        }
    }

    /// Tab-separated text: `label<TAB>sent1<TAB>sent2` per pair, or CoNLL-style
    /// `token<TAB>tag` lines with a blank line between sentences.
    pub fn write(&self, path: &Path, vocab: &Vocab) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        match &self.examples {
            TaskExamples::Seq(ex) => {
                for e in ex {
                    writeln!(
                        out,
                        "{}\t{}\t{}",
                        self.label_name(e.label),
                        vocab.decode(&e.first),
                        vocab.decode(&e.second)
                    )?;
                }
            }
            TaskExamples::Tag(ex) => {
                for e in ex {
                    for (tok, tag) in e.tokens.iter().zip(&e.tags) {
                        writeln!(out, "{}\t{}", vocab.token(*tok), self.label_name(*tag))?;
                    }
                    writeln!(out)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(
        path: &Path,
        vocab: &Vocab,
        kind: TaskKind,
        num_labels: usize,
        split: Split,
        language: &str,
    ) -> Result<TaskDataset> {
        let text = std::fs::read_to_string(path)?;
        let mut ds = TaskDataset {
            kind,
            split,
            language: language.to_string(),
            num_labels,
            examples: match kind {
                TaskKind::SeqCls => TaskExamples::Seq(Vec::new()),
                TaskKind::Tagging => TaskExamples::Tag(Vec::new()),
            },
        };
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut seq = Vec::new();
        let mut tag = Vec::new();
        let mut cur = TagExample {
            tokens: Vec::new(),
            tags: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            match kind {
                TaskKind::SeqCls => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let cols: Vec<&str> = line.split('\t').collect();
                    if cols.len() != 3 {
                        return Err(perr(i + 1, format!("expected 3 columns, got {}", cols.len())));
                    }
                    let label = ds
                        .parse_label(cols[0])
                        .ok_or_else(|| perr(i + 1, format!("unknown label `{}`", cols[0])))?;
                    seq.push(SeqExample {
                        first: vocab.encode(cols[1]),
                        second: vocab.encode(cols[2]),
                        label,
                    });
                }
                TaskKind::Tagging => {
                    if line.trim().is_empty() {
                        if !cur.tokens.is_empty() {
                            tag.push(std::mem::replace(
                                &mut cur,
                                TagExample {
                                    tokens: Vec::new(),
                                    tags: Vec::new(),
                                },
                            ));
                        }
                        continue;
                    }
                    let (tok, t) = line
                        .split_once('\t')
                        .ok_or_else(|| perr(i + 1, "expected token<TAB>tag".into()))?;
                    let t = ds
                        .parse_label(t)
                        .ok_or_else(|| perr(i + 1, format!("unknown tag `{t}`")))?;
                    cur.tokens.push(vocab.id(tok));
                    cur.tags.push(t);
                }
            }
        }
        if !cur.tokens.is_empty() {
            tag.push(cur);
        }
        ds.examples = match kind {
            TaskKind::SeqCls => TaskExamples::Seq(seq),
            TaskKind::Tagging => TaskExamples::Tag(tag),
        };
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlang::corpus::{ClassGrammar, CorpusSource, GrammarConfig};
    use crate::synthlang::language::{LanguageSpec, WordOrder};

    fn bed() -> (Vocab, Vec<Vec<u32>>) {
        let g = ClassGrammar::new(GrammarConfig::default()).unwrap();
        let lines = g.sentences(1500, 5).unwrap();
        let vocab = Vocab::build(&lines, 200).unwrap();
        let ids = lines.iter().map(|l| vocab.encode(l)).collect();
        (vocab, ids)
    }

    fn far(vocab: &Vocab) -> Language {
        LanguageSpec {
            code: "far".into(),
            cipher_seed: 17,
            order: WordOrder::Reverse,
            divergence: 0.5,
        }
        .realize(vocab.len())
    }

    #[test]
    fn length_rule() {
        assert_eq!(SEQ_LABELS[length_relation(3, 5)], "second-longer");
        assert_eq!(SEQ_LABELS[length_relation(5, 3)], "first-longer");
        assert_eq!(SEQ_LABELS[length_relation(4, 4)], "equal");
    }

    #[test]
    fn seq_task_is_balanced() {
        let (vocab, ids) = bed();
        let src = LanguageSpec::identity("src").realize(vocab.len());
        let ds = gen_seq_task(&ids, &src, 2000, 1, Split::Train, 1).unwrap();
        for c in ds.label_distribution() {
            assert!((c as f64 - 2000.0 / 3.0).abs() <= 0.05 * 2000.0 / 3.0);
        }
    }

    #[test]
    fn unequal_pairs_respect_the_margin() {
        let (vocab, ids) = bed();
        let src = LanguageSpec::identity("src").realize(vocab.len());
        let ds = gen_seq_task(&ids, &src, 600, 3, Split::Train, 5).unwrap();
        let TaskExamples::Seq(examples) = &ds.examples else { panic!("not a seq task") };
        for e in examples {
            let (a, b) = (e.first.len(), e.second.len());
            assert_eq!(length_relation(a, b), e.label);
            if e.label != 2 {
                assert!(a.abs_diff(b) >= 3, "{a} vs {b}");
            }
        }
        assert!(ds.label_distribution().iter().all(|&c| c > 150));
        // A margin wider than the length range cannot be met.
        assert!(gen_seq_task(&ids, &src, 30, 100, Split::Train, 5).is_err());
    }

    #[test]
    fn degenerate_corpus_rejected() {
        let ids = vec![vec![10, 11, 12]; 20];
        let src = LanguageSpec::identity("src").realize(50);
        assert!(gen_seq_task(&ids, &src, 30, 1, Split::Train, 0).is_err());
    }

    #[test]
    fn labels_survive_language_transform() {
        let (vocab, ids) = bed();
        let src = LanguageSpec::identity("src").realize(vocab.len());
        let tgt = far(&vocab);
        let base = gen_seq_task(&ids, &src, 1000, 1, Split::Test, 2).unwrap();
        let moved = gen_seq_task(&ids, &tgt, 1000, 1, Split::Test, 2).unwrap();
        let (TaskExamples::Seq(a), TaskExamples::Seq(b)) = (&base.examples, &moved.examples) else {
            panic!()
        };
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.label, y.label);
            assert_eq!(length_relation(y.first.len(), y.second.len()), y.label);
        }

        let table = tag_table(&vocab, 5);
        let tags = gen_tag_task(&ids[..1000], &vocab, 5, &tgt, Split::Test);
        let TaskExamples::Tag(ex) = &tags.examples else { panic!() };
        for e in ex {
            for (tok, tag) in e.tokens.iter().zip(&e.tags) {
                assert_eq!(table[tgt.cipher.decode(*tok) as usize], Some(*tag));
            }
        }
    }

    #[test]
    fn every_tag_bucket_occurs() {
        let (vocab, ids) = bed();
        let src = LanguageSpec::identity("src").realize(vocab.len());
        let ds = gen_tag_task(&ids, &vocab, 5, &src, Split::Train);
        let total: usize = ds.label_distribution().iter().sum();
        assert!(total >= 5000);
        assert!(ds.label_distribution().iter().all(|c| *c > 0));
    }

    #[test]
    fn tag_inputs_mark_cls_ignored() {
        let (vocab, ids) = bed();
        let src = LanguageSpec::identity("src").realize(vocab.len());
        let ds = gen_tag_task(&ids[..3], &vocab, 5, &src, Split::Dev);
        for (input, target) in ds.model_inputs() {
            let Target::Tags(t) = target else { panic!() };
            assert_eq!(input[0], CLS);
            assert_eq!(t[0], None);
            assert_eq!(t.len(), input.len());
        }
    }

    #[test]
    fn splits_are_disjoint() {
        let (_, ids) = bed();
        let (tr, dev, te) = split_sentences(&ids, 0.1, 0.1, 3);
        let a: BTreeSet<_> = tr.iter().collect();
        assert!(dev.iter().all(|s| !a.contains(s)));
        assert!(te.iter().all(|s| !a.contains(s) && !dev.contains(s)));
    }

    #[test]
    fn disk_round_trip() {
        let (vocab, ids) = bed();
        let tgt = far(&vocab);
        let dir = tempfile::tempdir().unwrap();
        for ds in [
            gen_seq_task(&ids, &tgt, 30, 1, Split::Dev, 4).unwrap(),
            gen_tag_task(&ids[..30], &vocab, 5, &tgt, Split::Dev),
        ] {
            let p = dir.path().join(format!("{}.tsv", ds.kind));
            ds.write(&p, &vocab).unwrap();
            let back = TaskDataset::read(&p, &vocab, ds.kind, ds.num_labels, Split::Dev, "far").unwrap();
            assert_eq!(back, ds);
        }
    }
}
