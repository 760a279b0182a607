//! Drift/advantage curves, plateau statistics and memory accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cache::KvCache;
use crate::error::{Error, Result};
use crate::fold::{Condition, EvalRecord};
use crate::model::ModelConfig;
use crate::precision::Scalar;

/// Bytes in a gigabyte (decimal).
pub const GB: f64 = 1e9;

/// Per-depth drift (`kv-fold − full`) and advantage (`isolated − kv-fold`),
/// averaged over windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthCurve {
    pub depths: Vec<usize>,
    pub drift: Vec<f64>,
    pub advantage: Vec<f64>,
    pub n_windows: usize,
}

impl DepthCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("depth,drift,advantage\n");
        for ((d, dr), adv) in self.depths.iter().zip(&self.drift).zip(&self.advantage) {
            let _ = writeln!(s, "{d},{dr:e},{adv:e}");
        }
        s
    }
}

pub fn drift_advantage(records: &[EvalRecord]) -> Result<DepthCurve> {
    let slot = |c: Condition| match c {
        Condition::Full => 0,
        Condition::Isolated => 1,
        Condition::KvFold => 2,
    };
    let mut by_depth: BTreeMap<usize, BTreeMap<usize, [Option<f64>; 3]>> = BTreeMap::new();
    let mut windows = BTreeSet::new();
    for r in records {
        windows.insert(r.window_id);
        if let Some(d) = r.depth {
            by_depth.entry(d).or_default().entry(r.window_id).or_default()[slot(r.condition)] = Some(r.nll);
        }
    }
    let mut curve = DepthCurve { depths: vec![], drift: vec![], advantage: vec![], n_windows: windows.len() };
    for (depth, per_window) in by_depth {
        let (mut drift, mut adv) = (0.0, 0.0);
        for nll in per_window.values() {
            let get = |c: Condition| {
                nll[slot(c)].ok_or_else(|| Error::MissingCondition { condition: c.to_string(), depth })
            };
            let (full, iso, kvf) = (get(Condition::Full)?, get(Condition::Isolated)?, get(Condition::KvFold)?);
            drift += kvf - full;
            adv += iso - kvf;
        }
        let n = per_window.len() as f64;
        curve.depths.push(depth);
        curve.drift.push(drift / n);
        curve.advantage.push(adv / n);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauStats {
    pub plateau_mean: f64,
    /// `max − min` of drift over the plateau depths.
    pub plateau_span: f64,
}

/// Default first depth of the plateau region.
pub const PLATEAU_START: usize = 7;

pub fn plateau_stats(curve: &DepthCurve, d_min: usize) -> Result<PlateauStats> {
    let vals: Vec<f64> = curve
        .depths
        .iter()
        .zip(&curve.drift)
        .filter(|(&d, _)| d >= d_min)
        .map(|(_, &v)| v)
        .collect();
    if vals.is_empty() {
        return Err(Error::NoPlateau(d_min));
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PlateauStats { plateau_mean: mean, plateau_span: max - min })
}

/// The cache dimensions that determine its size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvShape {
    pub n_layers: u64,
    pub n_kv_heads: u64,
    pub d_head: u64,
}

impl From<&ModelConfig> for KvShape {
    fn from(c: &ModelConfig) -> Self {
        Self { n_layers: c.n_layers as u64, n_kv_heads: c.n_kv_heads as u64, d_head: c.d_head as u64 }
    }
}

/// `n_layers · n_kv_heads · d_head · 2 · bytes_per_element` (keys and values).
pub fn kv_bytes_per_token(shape: KvShape, bytes_per_element: u64) -> u64 {
    shape.n_layers * shape.n_kv_heads * shape.d_head * 2 * bytes_per_element
}

/// Size of a materialized `[heads × rows × cols]` attention-score tensor.
pub fn attention_scores_bytes(heads: u64, rows: u64, cols: u64, bytes_per_element: u64) -> u64 {
    heads * rows * cols * bytes_per_element
}

pub fn measured_cache_bytes<T: Scalar>(cache: &KvCache<T>) -> u64 {
    cache.bytes() as u64
}

/// Analytical memory for one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub tokens: u64,
    pub kv_bytes_per_token: u64,
    pub fold_cache_bytes: u64,
    /// Cache bytes of a sink+window cache of the given capacity, if any.
    pub bounded_cache_bytes: Option<u64>,
    pub full_scores_bytes: u64,
    pub chunk_scores_bytes: u64,
}

pub fn memory_row(
    shape: KvShape,
    n_heads: u64,
    bytes_per_element: u64,
    tokens: u64,
    chunk_len: u64,
    bounded_capacity: Option<u64>,
) -> MemoryRow {
    let per_token = kv_bytes_per_token(shape, bytes_per_element);
    MemoryRow {
        tokens,
        kv_bytes_per_token: per_token,
        fold_cache_bytes: per_token * tokens,
        bounded_cache_bytes: bounded_capacity.map(|c| per_token * c.min(tokens)),
        full_scores_bytes: attention_scores_bytes(n_heads, tokens, tokens, bytes_per_element),
        chunk_scores_bytes: attention_scores_bytes(n_heads, chunk_len, tokens, bytes_per_element),
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-chunk median over repeated runs, in seconds. Every run must have the
/// same number of chunks.
pub fn per_chunk_median(runs: &[Vec<Duration>]) -> Vec<f64> {
    let n = runs.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let mut xs: Vec<f64> = runs.iter().map(|r| r[i].as_secs_f64()).collect();
            median(&mut xs)
        })
        .collect()
}

pub fn is_nondecreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0])
}
