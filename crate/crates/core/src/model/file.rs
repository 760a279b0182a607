//! `KVFW` weight files.
//!
//! ```text
//! "KVFW"  u32 version = 1
//! u32 n_layers, n_heads, n_kv_heads, d_model, d_head, d_ff, vocab_size, max_position
//! f32 rope_theta, f32 norm_eps
//! tensor directory + payloads (see `format`), every payload f32 (dtype 0)
//! ```
//!
//! Tensor names: `token_embedding`, `layer.{i}.attn_norm`, `layer.{i}.attn.wq`,
//! `layer.{i}.attn.wk`, `layer.{i}.attn.wv`, `layer.{i}.attn.wo`,
//! `layer.{i}.mlp_norm`, `layer.{i}.mlp.w_gate`, `layer.{i}.mlp.w_up`,
//! `layer.{i}.mlp.w_down`, `final_norm`, `lm_head`.

use std::collections::HashMap;
use std::path::Path;

use super::config::ModelConfig;
use super::weights::{expected_shape, LayerWeights, Weights};
use crate::error::{Error, Result};
use crate::format::{write_tensors, RawTensor, Reader};
use crate::precision::{DType, Scalar};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"KVFW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn encode_weights<T: Scalar>(config: &ModelConfig, weights: &Weights<T>) -> Result<Vec<u8>> {
    weights.validate(config)?;
    let mut buf = WEIGHTS_MAGIC.to_vec();
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for v in [
        config.n_layers,
        config.n_heads,
        config.n_kv_heads,
        config.d_model,
        config.d_head,
        config.d_ff,
        config.vocab_size,
        config.max_position,
    ] {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(config.rope_theta as f32).to_le_bytes());
    buf.extend_from_slice(&(config.norm_eps as f32).to_le_bytes());
    let tensors: Vec<RawTensor> = weights
        .named_tensors()
        .into_iter()
        .map(|(name, t)| RawTensor::from_tensor_f32(name, t))
        .collect();
    write_tensors(&mut buf, &tensors);
    Ok(buf)
}

/// Checks a weight file without building the model: header, tensor names,
/// dtypes, shapes and payload bounds. Returns the parsed config and tensors.
pub fn validate_weights(bytes: &[u8]) -> Result<(ModelConfig, Vec<RawTensor>)> {
    let mut r = Reader::new(bytes);
    r.expect_magic(WEIGHTS_MAGIC)?;
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported KVFW version {version}")));
    }
    let mut h = [0usize; 8];
    for v in &mut h {
        *v = r.u32()? as usize;
    }
    let config = ModelConfig {
        n_layers: h[0],
        n_heads: h[1],
        n_kv_heads: h[2],
        d_model: h[3],
        d_head: h[4],
        d_ff: h[5],
        vocab_size: h[6],
        max_position: h[7],
        rope_theta: r.f32()? as f64,
        norm_eps: r.f32()? as f64,
    };
    config.validate()?;
    let tensors = r.tensors()?;
    for t in &tensors {
        let want = expected_shape(&config, &t.name)
            .ok_or_else(|| Error::Format(format!("unexpected tensor `{}`", t.name)))?;
        if t.shape != want {
            return Err(Error::Shape(format!("{}: expected {want:?}, got {:?}", t.name, t.shape)));
        }
        if t.dtype != DType::F32 {
            return Err(Error::Format(format!("{}: payload must be f32", t.name)));
        }
    }
    let required = 3 + 9 * config.n_layers;
    if tensors.len() != required {
        return Err(Error::Format(format!(
            "expected {required} tensors, found {}",
            tensors.len()
        )));
    }
    Ok((config, tensors))
}

pub fn decode_weights<T: Scalar>(bytes: &[u8]) -> Result<(ModelConfig, Weights<T>)> {
    let (config, tensors) = validate_weights(bytes)?;
    let mut by_name: HashMap<String, RawTensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut take = |name: String| -> Result<_> {
        by_name
            .remove(&name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?
            .to_tensor::<T>()
    };
    let token_embedding = take("token_embedding".into())?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let mut f = |s: &str| take(format!("layer.{i}.{s}"));
        layers.push(LayerWeights {
            attn_norm: f("attn_norm")?,
            wq: f("attn.wq")?,
            wk: f("attn.wk")?,
            wv: f("attn.wv")?,
            wo: f("attn.wo")?,
            mlp_norm: f("mlp_norm")?,
            w_gate: f("mlp.w_gate")?,
            w_up: f("mlp.w_up")?,
            w_down: f("mlp.w_down")?,
        });
    }
    let weights = Weights {
        token_embedding,
        layers,
        final_norm: take("final_norm".into())?,
        lm_head: take("lm_head".into())?,
    };
    weights.validate(&config)?;
    Ok((config, weights))
}

pub fn save_weights<T: Scalar>(path: impl AsRef<Path>, config: &ModelConfig, weights: &Weights<T>) -> Result<()> {
    std::fs::write(path, encode_weights(config, weights)?)?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelConfig, Weights<T>)> {
    decode_weights(&std::fs::read(path)?)
}
