//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty distribution")]
    EmptyDistribution,

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown character {0:?}")]
    UnknownCharacter(char),

    #[error("vocabulary of {vocab} words cannot hold {requested} zero-shot words")]
    ZeroShotExceedsVocab { vocab: usize, requested: usize },

    #[error("no context-word occurrences at this threshold")]
    NoContextOccurrences,

    #[error("no trainable context: every word exceeds gamma")]
    EmptyContextList,

    #[error("subset capacity exceeded: {refs} reference words + <no-context> do not fit in S_hat = {s_hat}; increase S_hat")]
    SubsetCapacityExceeded { refs: usize, s_hat: usize },

    #[error("undefined weight for unseen word")]
    UnseenWordWeight,

    #[error("vanished prior for context column {0}")]
    VanishedPrior(usize),

    #[error("infeasible alignment: {frames} frames cannot carry {labels} labels ({repeats} adjacent repeats)")]
    InfeasibleAlignment {
        frames: usize,
        labels: usize,
        repeats: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("corpus format error: {0}")]
    CorpusFormat(String),

    #[error("empty reference")]
    EmptyReference,

    #[error("empty span set")]
    EmptySpans,

    #[error("empty context list for inference")]
    EmptyInferenceList,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
