//! Synthetic multilingual test bed.
//!
//! A base language is sampled from a class bigram grammar; further languages
//! are derived from it by a vocabulary cipher and a word-order rule. Task
//! labels are defined on the base language, so they are identical in every
//! derived language and zero-shot transfer can be measured exactly.

mod bed;
mod corpus;
mod language;
mod tasks;
mod vocab;

pub use bed::{Bed, BedConfig, TaskSplits};
pub use corpus::{fnv1a, tag_bucket, ClassGrammar, CorpusSource, GrammarConfig, TextCorpus};
pub use language::{Cipher, Language, LanguageSpec, WordOrder};
pub use tasks::{
    gen_seq_task, gen_tag_task, length_relation, split_sentences, tag_table, SeqExample, Split,
    TagExample, Target, TaskDataset, TaskExamples, TaskKind, SEQ_LABELS,
};
pub use vocab::{is_reserved, Vocab, CLS, MASK, NUM_RESERVED, PAD, SEP, UNK};
