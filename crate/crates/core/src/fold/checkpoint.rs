//! `KVFS` fold-state checkpoints, written with the same container as weight files.
//!
//! ```text
//! "KVFS"  u32 version = 1
//! u8 scalar dtype (0 = f32, 1 = f64)
//! u32 n_layers, u32 n_kv_heads, u32 d_head
//! u64 next_position, i64 depth (-1 before the first chunk)
//! u64 tokens_seen, u64 last_appended
//! u8 policy tag, u64 param_a, u64 param_b, f64 param_c
//! tensors: positions (u64), stats (f64), layer.{i}.keys, layer.{i}.values
//! ```

use std::path::Path;

use super::driver::FoldState;
use crate::cache::{CachePolicy, KvCache, QuantBits};
use crate::error::{Error, Result};
use crate::format::{write_tensors, RawTensor, Reader};
use crate::model::LayerKv;
use crate::precision::{DType, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KVFS";
pub const CHECKPOINT_VERSION: u32 = 1;

fn encode_policy(p: CachePolicy) -> (u8, u64, u64, f64) {
    match p {
        CachePolicy::FoldAccumulate => (0, 0, 0, 0.0),
        CachePolicy::SinkWindow { n_sinks, window } => (1, n_sinks as u64, window as u64, 0.0),
        CachePolicy::QuantRoundTrip { bits } => (2, bits.bits() as u64, 0, 0.0),
        CachePolicy::UniformDecay { gamma } => (3, 0, 0, gamma),
        CachePolicy::AttentionPrune { keep } => (4, keep as u64, 0, 0.0),
    }
}

fn decode_policy(tag: u8, a: u64, b: u64, c: f64) -> Result<CachePolicy> {
    Ok(match tag {
        0 => CachePolicy::FoldAccumulate,
        1 => CachePolicy::SinkWindow { n_sinks: a as usize, window: b as usize },
        2 => CachePolicy::QuantRoundTrip { bits: QuantBits::try_from(a as u8)? },
        3 => CachePolicy::UniformDecay { gamma: c },
        4 => CachePolicy::AttentionPrune { keep: a as usize },
        other => return Err(Error::Format(format!("unknown policy tag {other}"))),
    })
}

pub fn encode_state<T: Scalar>(state: &FoldState<T>) -> Vec<u8> {
    let cache = &state.cache;
    let layers = cache.layers();
    let (n_kv, d_head) = layers.first().map_or((0, 0), |l| (l.n_kv_heads(), l.d_head()));
    let mut buf = CHECKPOINT_MAGIC.to_vec();
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(T::DTYPE as u8);
    for v in [layers.len(), n_kv, d_head] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(state.next_position() as u64).to_le_bytes());
    buf.extend_from_slice(&state.depth().map_or(-1i64, |d| d as i64).to_le_bytes());
    buf.extend_from_slice(&(cache.tokens_seen() as u64).to_le_bytes());
    buf.extend_from_slice(&(cache.last_appended() as u64).to_le_bytes());
    let (tag, a, b, c) = encode_policy(cache.policy());
    buf.push(tag);
    buf.extend_from_slice(&a.to_le_bytes());
    buf.extend_from_slice(&b.to_le_bytes());
    buf.extend_from_slice(&c.to_le_bytes());

    let positions: Vec<u64> = cache.positions().iter().map(|&p| p as u64).collect();
    let mut tensors = vec![
        RawTensor::from_u64s("positions", &positions),
        RawTensor::from_f64s("stats", cache.stats()),
    ];
    for (i, l) in layers.iter().enumerate() {
        tensors.push(RawTensor::from_tensor(format!("layer.{i}.keys"), l.keys()));
        tensors.push(RawTensor::from_tensor(format!("layer.{i}.values"), l.values()));
    }
    write_tensors(&mut buf, &tensors);
    buf
}

pub fn decode_state<T: Scalar>(bytes: &[u8]) -> Result<FoldState<T>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported KVFS version {version}")));
    }
    let dtype = DType::from_code(r.u8()?);
    if dtype != Some(T::DTYPE) {
        return Err(Error::Format(format!(
            "checkpoint scalar type {dtype:?} does not match engine {:?}",
            T::DTYPE
        )));
    }
    let n_layers = r.u32()? as usize;
    let n_kv = r.u32()? as usize;
    let d_head = r.u32()? as usize;
    let next_position = r.u64()? as usize;
    let depth = usize::try_from(r.i64()?).ok();
    let tokens_seen = r.u64()? as usize;
    let last_appended = r.u64()? as usize;
    let (tag, a, b, c) = (r.u8()?, r.u64()?, r.u64()?, r.f64()?);
    let policy = decode_policy(tag, a, b, c)?;
    let tensors = r.tensors()?;
    let find = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")))
    };
    let positions: Vec<usize> = find("positions")?.to_u64s()?.into_iter().map(|p| p as usize).collect();
    let stats = find("stats")?.to_f64s()?;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let keys = find(&format!("layer.{i}.keys"))?.to_tensor::<T>()?;
        let values = find(&format!("layer.{i}.values"))?.to_tensor::<T>()?;
        let layer = LayerKv::new(keys, values, positions.clone())?;
        if layer.n_kv_heads() != n_kv || layer.d_head() != d_head {
            return Err(Error::Format(format!("layer {i} shape disagrees with header")));
        }
        layers.push(layer);
    }
    let cache = KvCache::from_parts(layers, policy, stats, last_appended, tokens_seen)?;
    Ok(FoldState::from_parts(cache, next_position, depth))
}

pub fn save_state<T: Scalar>(path: impl AsRef<Path>, state: &FoldState<T>) -> Result<()> {
    std::fs::write(path, encode_state(state))?;
    Ok(())
}

pub fn load_state<T: Scalar>(path: impl AsRef<Path>) -> Result<FoldState<T>> {
    decode_state(&std::fs::read(path)?)
}
