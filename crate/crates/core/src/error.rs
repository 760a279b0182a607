use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {kernel}")]
    NonFinite { kernel: &'static str },

    #[error("softmax row {row} has no unmasked entries")]
    FullyMasked { row: usize },

    #[error("head dimension must be even for rotary embedding, got {0}")]
    OddHeadDim(usize),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("position overflow: {end} exceeds max_position {max}")]
    PositionOverflow { end: usize, max: usize },

    #[error("prefix has {got} layers, model has {expected}")]
    LayerCount { expected: usize, got: usize },

    #[error("position {position} does not follow existing max position {last}")]
    PositionOrder { position: usize, last: usize },

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("invalid cache policy: {0}")]
    Policy(String),

    #[error("attention mass has {got} entries, cache holds {expected} rows")]
    MassLength { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("chunk starts at {got}, fold expected {expected}")]
    Discontinuous { expected: usize, got: usize },

    #[error("missing condition {condition} at depth {depth}")]
    MissingCondition { condition: String, depth: usize },

    #[error("no depths >= {0} in curve")]
    NoPlateau(usize),

    #[error("needle: {0}")]
    Needle(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
