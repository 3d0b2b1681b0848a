use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("malformed weight header: {0}")]
    MalformedHeader(String),

    #[error("shape mismatch for block `{block}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        block: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("truncated weight blob: expected {expected} bytes, found {found}")]
    TruncatedBlob { expected: usize, found: usize },

    #[error("weight blob has {extra} trailing bytes")]
    TrailingBytes { extra: usize },

    #[error("non-finite weight in block `{0}`")]
    NonFiniteWeight(String),

    #[error("token {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("empty multi-state at layer {layer}, head {head}")]
    EmptyState { layer: usize, head: usize },

    #[error("position {position} does not follow current maximum {current_max} (layer {layer}, head {head})")]
    PositionOrder {
        layer: usize,
        head: usize,
        position: usize,
        current_max: usize,
    },

    #[error("eviction index {index} out of range for length {len} (layer {layer}, head {head})")]
    IndexOutOfRange {
        layer: usize,
        head: usize,
        index: usize,
        len: usize,
    },

    #[error("layer/head ({layer}, {head}) outside state dimensions")]
    NoSuchHead { layer: usize, head: usize },

    #[error("unknown policy `{name}`; supported: {supported}")]
    UnknownPolicy { name: String, supported: String },

    #[error("invalid policy parameters: {0}")]
    InvalidPolicy(String),

    #[error("gap must be a positive count")]
    ZeroGap,

    #[error("positions must be strictly increasing (index {index})")]
    NonIncreasing { index: usize },

    #[error("chunk length {chunk_len} exceeds training context {train_context_len}; enable remapping to extrapolate")]
    ContextTooLong {
        chunk_len: usize,
        train_context_len: usize,
    },

    #[error("invalid scripted trace: {0}")]
    InvalidScript(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}
