use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("token id {id} is outside the vocabulary (size {size})")]
    Vocab { id: u32, size: usize },

    #[error("sequence length {len} exceeds the maximum of {max}")]
    Length { len: usize, max: usize },

    #[error("every position carries the ignore label; the loss is empty")]
    EmptyLoss,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parameter `{0}` is trainable but has no gradient")]
    MissingGrad(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("adapter swap failed at layer {layer}: expected {expected:?}, got {got:?}")]
    Swap {
        layer: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{0}")]
    Structural(String),

    #[error("unknown training phase `{0}`")]
    UnknownPhase(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("`{0}` stacks a language adapter; a target-language adapter file is required")]
    MissingAdapter(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::UnknownPhase(_) => 1,
            Error::NonFinite(_) | Error::Diverged { .. } => 2,
            Error::MissingArtifact(_) | Error::MissingAdapter(_) => 3,
            _ => 1,
        }
    }
}
