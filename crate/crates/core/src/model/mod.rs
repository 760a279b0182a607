//! Decoder-only transformer: config, weights, the chunk forward pass and
//! greedy decoding.

mod config;
mod decode;
pub mod file;
mod forward;
mod kv;
mod weights;

pub use config::ModelConfig;
pub use decode::greedy_decode;
pub use forward::{argmax, support_mask, ChunkOutput, Model};
pub use kv::LayerKv;
pub use weights::{expected_shape, LayerWeights, Weights};
