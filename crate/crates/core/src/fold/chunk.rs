use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A block of consecutive tokens processed in one forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub tokens: Vec<u32>,
    /// Absolute position of the first token.
    pub start_position: usize,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn end_position(&self) -> usize {
        self.start_position + self.tokens.len()
    }
}

/// Splits `tokens` into consecutive chunks of `chunk_len`; a shorter final
/// chunk keeps the remainder.
pub fn chunk_sequence(tokens: &[u32], chunk_len: usize) -> Result<Vec<Chunk>> {
    if chunk_len == 0 {
        return Err(Error::Config("chunk length must be at least 1".into()));
    }
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    Ok(tokens
        .chunks(chunk_len)
        .enumerate()
        .map(|(t, c)| Chunk { tokens: c.to_vec(), start_position: t * chunk_len })
        .collect())
}
