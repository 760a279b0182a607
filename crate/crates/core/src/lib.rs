//! A decoder-only transformer inference engine that processes long inputs as
//! a chain of fixed-size chunks, carrying the key/value cache forward from one
//! chunk to the next.
//!
//! The cache handed between chunks can be transformed by a [`CachePolicy`]:
//! kept whole, bounded to sinks plus a recent window, quantized, decayed or
//! pruned by attention mass. Around that core the crate ships the tools to
//! measure what each policy does: per-depth NLL drift against an unchunked
//! forward, needle retrieval trials with a mechanistic residency check, and
//! analytical memory accounting.
//!
//! ```no_run
//! use kvfold::{chunk_sequence, fold_run, CachePolicy, Model, ModelConfig, Rounding};
//!
//! let config = ModelConfig::tiny();
//! let model = Model::<f64>::synthetic(config, 0, Rounding::Native)?;
//! let tokens: Vec<u32> = (0..256).map(|i| i % 64).collect();
//! let chunks = chunk_sequence(&tokens, 32)?;
//! let (state, steps) = fold_run(&model, &chunks, CachePolicy::FoldAccumulate)?;
//! assert_eq!(steps.len(), 8);
//! assert_eq!(state.cache.len(), 256);
//! # Ok::<(), kvfold::Error>(())
//! ```

pub mod cache;
pub mod cli;
mod error;
pub mod fold;
pub mod format;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod needle;
pub mod precision;
mod tensor;

pub use cache::{CachePolicy, KvCache, QuantBits};
pub use error::{Error, Result};
pub use fold::{
    chunk_sequence, eval_three_conditions, fold_run, Chunk, Condition, EvalRecord, FoldState, StepOutput,
};
pub use model::{greedy_decode, LayerKv, Model, ModelConfig, Weights};
pub use precision::{PrecisionMode, Rounding, Scalar};
pub use tensor::Tensor;
