//! Per-chunk NLL under the full, isolated and kv-fold conditions.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::chunk::chunk_sequence;
use super::driver::fold_run;
use crate::cache::CachePolicy;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::precision::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// One unchunked forward over the whole window.
    Full,
    /// Every chunk on its own, no prefix.
    Isolated,
    /// Chunks folded with the accumulated cache as prefix.
    KvFold,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Full, Condition::Isolated, Condition::KvFold];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Isolated => "isolated",
            Self::KvFold => "kv-fold",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean next-token NLL of one chunk under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub window_id: usize,
    pub chunk_index: usize,
    /// Chunk index minus one; `null` for the first chunk.
    pub depth: Option<usize>,
    pub condition: Condition,
    /// Nats per scored token.
    pub nll: f64,
    pub tokens_scored: usize,
}

/// Position ids used for isolated chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsolatedPositions {
    /// Every chunk restarts at position 0.
    #[default]
    Local,
    /// Chunks keep their absolute positions.
    Absolute,
}

/// `logsumexp(row) - row[target]`, evaluated in f64.
pub fn token_nll<T: Scalar>(row: &[T], target: u32) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
    let sum: f64 = row.iter().map(|&v| (v.as_f64() - max).exp()).sum();
    max + sum.ln() - row[target as usize].as_f64()
}

/// Scores targets `tokens[p]` for `p` in `range` using `logits_at(p - 1)`.
fn mean_nll<'a, T: Scalar + 'a>(
    tokens: &[u32],
    range: std::ops::Range<usize>,
    logits_at: impl Fn(usize) -> &'a [T],
) -> (f64, usize) {
    let mut total = 0.0;
    let mut n = 0;
    for p in range.filter(|&p| p >= 1) {
        total += token_nll(logits_at(p - 1), tokens[p]);
        n += 1;
    }
    (if n == 0 { 0.0 } else { total / n as f64 }, n)
}

/// Runs the three reference conditions over one token window, folding the
/// kv-fold condition under `policy`.
///
/// A token is scored when its predecessor is visible under the condition:
/// the first token of the window never is, and under `isolated` the first
/// token of every chunk is not. Chunks with nothing to score are omitted.
pub fn eval_three_conditions<T: Scalar>(
    model: &Model<T>,
    tokens: &[u32],
    chunk_len: usize,
    window_id: usize,
    isolated_positions: IsolatedPositions,
    policy: CachePolicy,
) -> Result<Vec<EvalRecord>> {
    let chunks = chunk_sequence(tokens, chunk_len)?;
    let max = model.config().max_position;
    if tokens.len() > max {
        return Err(Error::PositionOverflow { end: tokens.len(), max });
    }
    let full = model.forward_chunk(tokens, &[], 0)?.logits;
    let (_, steps) = fold_run(model, &chunks, policy)?;
    let fold_rows: Vec<&Tensor<T>> = steps.iter().map(|s| &s.logits).collect();
    let fold_row = |p: usize| fold_rows[p / chunk_len].row(p % chunk_len);

    let mut records = Vec::with_capacity(chunks.len() * 3);
    for (t, chunk) in chunks.iter().enumerate() {
        let range = chunk.start_position..chunk.end_position();
        let start = match isolated_positions {
            IsolatedPositions::Local => 0,
            IsolatedPositions::Absolute => chunk.start_position,
        };
        let iso = model.forward_chunk(&chunk.tokens, &[], start)?.logits;
        let local: Vec<u32> = chunk.tokens.clone();
        let scored = [
            (Condition::Full, mean_nll(tokens, range.clone(), |p| full.row(p))),
            (Condition::Isolated, mean_nll(&local, 0..local.len(), |p| iso.row(p))),
            (Condition::KvFold, mean_nll(tokens, range.clone(), fold_row)),
        ];
        for (condition, (nll, n)) in scored {
            if n == 0 {
                continue;
            }
            records.push(EvalRecord {
                window_id,
                chunk_index: t,
                depth: t.checked_sub(1),
                condition,
                nll,
                tokens_scored: n,
            });
        }
    }
    Ok(records)
}
