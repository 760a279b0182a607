//! The left fold over chunks with the KV cache as accumulator.

use std::time::{Duration, Instant};

use super::chunk::Chunk;
use crate::cache::{CachePolicy, KvCache};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::precision::Scalar;
use crate::tensor::Tensor;

/// Accumulator threaded through the fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldState<T> {
    pub cache: KvCache<T>,
    next_position: usize,
    depth: Option<usize>,
}

/// What one fold step produced.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub logits: Tensor<T>,
    pub elapsed: Duration,
    /// Cache rows visible to this chunk (before its own append).
    pub prefix_len: usize,
}

impl<T: Scalar> FoldState<T> {
    pub fn new(model: &Model<T>, policy: CachePolicy) -> Result<Self> {
        let cfg = model.config();
        Ok(Self {
            cache: KvCache::new(cfg.n_layers, cfg.n_kv_heads, cfg.d_head, policy)?,
            next_position: 0,
            depth: None,
        })
    }

    pub(crate) fn from_parts(cache: KvCache<T>, next_position: usize, depth: Option<usize>) -> Self {
        Self { cache, next_position, depth }
    }

    /// Total tokens consumed so far.
    pub fn next_position(&self) -> usize {
        self.next_position
    }

    /// Chunks consumed minus one; `None` before the first chunk.
    pub fn depth(&self) -> Option<usize> {
        self.depth
    }

    /// One fold step: forward the chunk over the cache, append its keys and
    /// values, then apply the cache policy.
    pub fn step(&mut self, model: &Model<T>, chunk: &Chunk) -> Result<StepOutput<T>> {
        if chunk.start_position != self.next_position {
            return Err(Error::Discontinuous {
                expected: self.next_position,
                got: chunk.start_position,
            });
        }
        let started = Instant::now();
        let prefix_len = self.cache.len();
        let out = if self.cache.policy().needs_attention_mass() {
            model.forward_chunk_with_mass(&chunk.tokens, self.cache.layers(), chunk.start_position)?
        } else {
            model.forward_chunk(&chunk.tokens, self.cache.layers(), chunk.start_position)?
        };
        self.cache.append(out.new_kv)?;
        if let Some(mass) = out.attention_mass {
            self.cache.record_attention_mass(&mass)?;
        }
        self.cache.apply_policy()?;
        self.next_position = chunk.end_position();
        self.depth = Some(self.depth.map_or(0, |d| d + 1));
        Ok(StepOutput { logits: out.logits, elapsed: started.elapsed(), prefix_len })
    }

    /// Folds `chunks` in order, starting from this state.
    pub fn run(&mut self, model: &Model<T>, chunks: &[Chunk]) -> Result<Vec<StepOutput<T>>> {
        chunks.iter().map(|c| self.step(model, c)).collect()
    }
}

/// `foldl(step, empty cache, chunks)`: returns the final state and each
/// chunk's step output.
pub fn fold_run<T: Scalar>(
    model: &Model<T>,
    chunks: &[Chunk],
    policy: CachePolicy,
) -> Result<(FoldState<T>, Vec<StepOutput<T>>)> {
    let total: usize = chunks.iter().map(Chunk::len).sum();
    if total > model.config().max_position {
        return Err(Error::PositionOverflow { end: total, max: model.config().max_position });
    }
    let mut state = FoldState::new(model, policy)?;
    let steps = state.run(model, chunks)?;
    Ok((state, steps))
}
