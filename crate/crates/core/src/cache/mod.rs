//! The carried KV cache and the policies applied to it after every append.
//!
//! The fold appends each chunk's keys/values and then calls
//! [`KvCache::apply_policy`] exactly once:
//!
//! * `FoldAccumulate` leaves the cache untouched, so it grows with the sequence.
//! * `SinkWindow` keeps the `n_sinks` oldest positions and the `window` newest.
//! * `QuantRoundTrip` replaces the rows appended in this step with their
//!   int4/int8 reconstruction. Each row is round-tripped once in its lifetime;
//!   since the round trip is idempotent up to the scale's last bit,
//!   re-quantizing the whole cache every step would store the same values.
//! * `UniformDecay` multiplies every value row by `gamma`; keys stay as they are.
//! * `AttentionPrune` keeps the `keep` older rows with the largest accumulated
//!   attention mass plus all rows of the current step (ties go to newer rows).

mod quant;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use quant::{quantize_roundtrip, QuantBits, QuantGroup};

use crate::error::{Error, Result};
use crate::model::LayerKv;
use crate::precision::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CachePolicy {
    FoldAccumulate,
    SinkWindow { n_sinks: usize, window: usize },
    QuantRoundTrip { bits: QuantBits },
    UniformDecay { gamma: f64 },
    AttentionPrune { keep: usize },
}

impl CachePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::SinkWindow { n_sinks, window } if n_sinks + window == 0 => {
                Err(Error::Policy("sink-window capacity must be at least 1".into()))
            }
            Self::UniformDecay { gamma } if !(gamma > 0.0 && gamma <= 1.0) => {
                Err(Error::Policy(format!("decay gamma must be in (0, 1], got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether the policy needs attention mass from the forward pass.
    pub fn needs_attention_mass(&self) -> bool {
        matches!(self, Self::AttentionPrune { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::FoldAccumulate => "fold",
            Self::SinkWindow { .. } => "sink-window",
            Self::QuantRoundTrip { .. } => "quant",
            Self::UniformDecay { .. } => "decay",
            Self::AttentionPrune { .. } => "prune",
        }
    }
}

impl fmt::Display for CachePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FoldAccumulate => write!(f, "fold"),
            Self::SinkWindow { n_sinks, window } => write!(f, "sink-window({n_sinks},{window})"),
            Self::QuantRoundTrip { bits } => write!(f, "quant(int{})", bits.bits()),
            Self::UniformDecay { gamma } => write!(f, "decay({gamma})"),
            Self::AttentionPrune { keep } => write!(f, "prune({keep})"),
        }
    }
}

/// Per-layer cache plus the policy that governs it.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<T> {
    layers: Vec<LayerKv<T>>,
    policy: CachePolicy,
    /// Accumulated attention mass per cached row.
    stats: Vec<f64>,
    last_appended: usize,
    tokens_seen: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(n_layers: usize, n_kv_heads: usize, d_head: usize, policy: CachePolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            layers: (0..n_layers).map(|_| LayerKv::empty(n_kv_heads, d_head)).collect(),
            policy,
            stats: Vec::new(),
            last_appended: 0,
            tokens_seen: 0,
        })
    }

    /// Rebuilds a cache from saved parts, checking the cross-layer invariants.
    pub fn from_parts(
        layers: Vec<LayerKv<T>>,
        policy: CachePolicy,
        stats: Vec<f64>,
        last_appended: usize,
        tokens_seen: usize,
    ) -> Result<Self> {
        policy.validate()?;
        let cache = Self { layers, policy, stats, last_appended, tokens_seen };
        let len = cache.len();
        if cache.layers.iter().any(|l| l.positions() != cache.positions()) {
            return Err(Error::Shape("cache layers hold different positions".into()));
        }
        if cache.stats.len() != len || last_appended > len {
            return Err(Error::Shape("cache bookkeeping does not match its rows".into()));
        }
        Ok(cache)
    }

    pub fn layers(&self) -> &[LayerKv<T>] {
        &self.layers
    }

    pub fn policy(&self) -> CachePolicy {
        self.policy
    }

    /// Rows per layer.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, LayerKv::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Absolute positions currently cached (identical on every layer).
    pub fn positions(&self) -> &[usize] {
        self.layers.first().map_or(&[], |l| l.positions())
    }

    pub fn stats(&self) -> &[f64] {
        &self.stats
    }

    pub fn last_appended(&self) -> usize {
        self.last_appended
    }

    pub fn tokens_seen(&self) -> usize {
        self.tokens_seen
    }

    /// Bytes held by keys and values across all layers.
    pub fn bytes(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 2 * l.len() * l.n_kv_heads() * l.d_head() * T::DTYPE.size())
            .sum()
    }

    pub fn append(&mut self, new_kv: Vec<LayerKv<T>>) -> Result<()> {
        if new_kv.len() != self.layers.len() {
            return Err(Error::LayerCount { expected: self.layers.len(), got: new_kv.len() });
        }
        let rows = new_kv[0].len();
        if new_kv.iter().any(|l| l.positions() != new_kv[0].positions()) {
            return Err(Error::Shape("appended layers hold different positions".into()));
        }
        if let (Some(&first), Some(&last)) = (new_kv[0].positions().first(), self.positions().last()) {
            if first <= last {
                return Err(Error::PositionOrder { position: first, last });
            }
        }
        for (layer, new) in self.layers.iter_mut().zip(&new_kv) {
            layer.append(new)?;
        }
        self.stats.extend(std::iter::repeat_n(0.0, rows));
        self.last_appended = rows;
        self.tokens_seen += rows;
        Ok(())
    }

    /// Adds per-row attention mass from the last forward pass.
    pub fn record_attention_mass(&mut self, sums: &[f64]) -> Result<()> {
        if sums.len() != self.len() {
            return Err(Error::MassLength { expected: self.len(), got: sums.len() });
        }
        if sums.iter().any(|&s| s.is_nan() || s < 0.0) {
            return Err(Error::Policy("attention mass must be nonnegative".into()));
        }
        for (acc, s) in self.stats.iter_mut().zip(sums) {
            *acc += s;
        }
        Ok(())
    }

    pub fn apply_policy(&mut self) -> Result<()> {
        let len = self.len();
        match self.policy {
            CachePolicy::FoldAccumulate => {}
            CachePolicy::SinkWindow { n_sinks, window } => {
                if len > n_sinks + window {
                    let keep: Vec<bool> = (0..len).map(|i| i < n_sinks || i >= len - window).collect();
                    self.retain(&keep);
                }
            }
            CachePolicy::QuantRoundTrip { bits } => {
                let n = self.last_appended;
                for layer in &mut self.layers {
                    requantize_tail(layer.keys_mut(), n, bits)?;
                    requantize_tail(layer.values_mut(), n, bits)?;
                }
            }
            CachePolicy::UniformDecay { gamma } => {
                let g = T::from_f64_lossy(gamma);
                for layer in &mut self.layers {
                    for v in layer.values_mut().data_mut() {
                        *v *= g;
                    }
                }
            }
            CachePolicy::AttentionPrune { keep } => {
                let old = len - self.last_appended;
                if old > keep {
                    let mut order: Vec<usize> = (0..old).collect();
                    // highest mass first; equal mass prefers the newer row
                    order.sort_by(|&a, &b| self.stats[b].total_cmp(&self.stats[a]).then(b.cmp(&a)));
                    let mut mask = vec![false; len];
                    for &i in order.iter().take(keep) {
                        mask[i] = true;
                    }
                    mask[old..].fill(true);
                    self.retain(&mask);
                }
            }
        }
        Ok(())
    }

    fn retain(&mut self, keep: &[bool]) {
        for layer in &mut self.layers {
            layer.retain_rows(keep);
        }
        let mut i = 0;
        self.stats.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let tail = keep.len() - self.last_appended;
        self.last_appended = keep[tail..].iter().filter(|&&k| k).count();
    }
}

fn requantize_tail<T: Scalar>(t: &mut crate::tensor::Tensor<T>, rows: usize, bits: QuantBits) -> Result<()> {
    if rows == 0 {
        return Ok(());
    }
    let total = t.rows();
    let width = t.row_width();
    let shape = t.shape().to_vec();
    let tail = crate::tensor::Tensor::new(
        vec![rows, shape[1], shape[2]],
        t.data()[(total - rows) * width..].to_vec(),
    )?;
    let q = quantize_roundtrip(&tail, bits)?;
    t.data_mut()[(total - rows) * width..].copy_from_slice(q.data());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn rows(start: usize, n: usize, layers: usize) -> Vec<LayerKv<f64>> {
        (0..layers)
            .map(|l| {
                let data = |off: f64| {
                    Tensor::from_fn(vec![n, 1, 2], |i| off + (start * 2 + i) as f64 + l as f64 * 0.5)
                };
                LayerKv::new(data(0.0), data(1000.0), (start..start + n).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn append_grows_and_preserves_rows() {
        let mut c = KvCache::new(2, 1, 2, CachePolicy::FoldAccumulate).unwrap();
        c.append(rows(0, 256, 2)).unwrap();
        c.apply_policy().unwrap();
        assert_eq!(c.len(), 256);
        let before = c.layers()[1].clone();
        c.append(rows(256, 256, 2)).unwrap();
        c.apply_policy().unwrap();
        assert_eq!(c.len(), 512);
        assert_eq!(c.positions(), (0..512).collect::<Vec<_>>().as_slice());
        assert_eq!(&c.layers()[1].keys().data()[..512], before.keys().data());
        assert_eq!(&c.layers()[1].values().data()[..512], before.values().data());
    }

    #[test]
    fn append_rejects_position_regression() {
        let mut c = KvCache::new(1, 1, 2, CachePolicy::FoldAccumulate).unwrap();
        c.append(rows(0, 4, 1)).unwrap();
        assert!(matches!(c.append(rows(3, 2, 1)), Err(Error::PositionOrder { .. })));
        assert!(matches!(c.append(rows(9, 2, 2)), Err(Error::LayerCount { .. })));
    }

    #[test]
    fn sink_window_after_2000_tokens() {
        let policy = CachePolicy::SinkWindow { n_sinks: 4, window: 1020 };
        let mut c = KvCache::new(1, 1, 2, policy).unwrap();
        for start in (0..2000).step_by(250) {
            c.append(rows(start, 250, 1)).unwrap();
            c.apply_policy().unwrap();
        }
        assert_eq!(c.len(), 1024);
        let want: Vec<usize> = (0..4).chain(980..2000).collect();
        assert_eq!(c.positions(), want.as_slice());
    }

    #[test]
    fn sink_window_survivors_unmodified() {
        let policy = CachePolicy::SinkWindow { n_sinks: 1, window: 3 };
        let mut c = KvCache::new(1, 1, 2, policy).unwrap();
        c.append(rows(0, 6, 1)).unwrap();
        c.apply_policy().unwrap();
        assert_eq!(c.positions(), &[0, 3, 4, 5]);
        assert_eq!(c.layers()[0].keys().data(), &[0.0, 1.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn decay_one_is_identity_and_keys_untouched() {
        let mut c = KvCache::new(1, 1, 2, CachePolicy::UniformDecay { gamma: 1.0 }).unwrap();
        c.append(rows(0, 3, 1)).unwrap();
        let before = c.clone();
        c.apply_policy().unwrap();
        assert_eq!(c, before);

        let mut c = KvCache::new(1, 1, 2, CachePolicy::UniformDecay { gamma: 0.5 }).unwrap();
        c.append(rows(0, 3, 1)).unwrap();
        c.apply_policy().unwrap();
        assert_eq!(c.layers()[0].keys(), before.layers()[0].keys());
        assert_eq!(c.layers()[0].values().data()[0], 500.0);
    }

    #[test]
    fn quant_touches_only_new_rows() {
        let mut c = KvCache::new(1, 1, 2, CachePolicy::QuantRoundTrip { bits: QuantBits::Int4 }).unwrap();
        c.append(rows(0, 3, 1)).unwrap();
        c.apply_policy().unwrap();
        let first = c.layers()[0].clone();
        c.append(rows(3, 3, 1)).unwrap();
        c.apply_policy().unwrap();
        assert_eq!(&c.layers()[0].keys().data()[..6], first.keys().data());
        assert_eq!(c.positions(), &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn prune_keeps_heaviest_and_current() {
        let mut c = KvCache::new(1, 1, 2, CachePolicy::AttentionPrune { keep: 2 }).unwrap();
        c.append(rows(0, 4, 1)).unwrap();
        c.record_attention_mass(&[5.0, 1.0, 5.0, 3.0]).unwrap();
        c.apply_policy().unwrap();
        // nothing older than the current step yet
        assert_eq!(c.len(), 4);
        c.append(rows(4, 2, 1)).unwrap();
        c.record_attention_mass(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        c.apply_policy().unwrap();
        // rows 0 and 2 tie at 5.0 and both make it
        assert_eq!(c.positions(), &[0, 2, 4, 5]);
        assert_eq!(c.stats(), &[5.0, 5.0, 1.0, 1.0]);
    }

    #[test]
    fn prune_ties_prefer_recent() {
        let mut c = KvCache::new(1, 1, 2, CachePolicy::AttentionPrune { keep: 2 }).unwrap();
        c.append(rows(0, 4, 1)).unwrap();
        c.append(rows(4, 1, 1)).unwrap();
        c.apply_policy().unwrap();
        assert_eq!(c.positions(), &[2, 3, 4]);
    }

    #[test]
    fn attention_mass_checks() {
        let mut c = KvCache::new(1, 1, 2, CachePolicy::AttentionPrune { keep: 2 }).unwrap();
        c.append(rows(0, 3, 1)).unwrap();
        assert!(matches!(c.record_attention_mass(&[1.0]), Err(Error::MassLength { .. })));
        c.record_attention_mass(&[0.0; 3]).unwrap();
        assert_eq!(c.stats(), &[0.0; 3]);
        c.record_attention_mass(&[1.0; 3]).unwrap();
        c.record_attention_mass(&[1.0; 3]).unwrap();
        assert_eq!(c.stats(), &[2.0; 3]);
    }

    #[test]
    fn invalid_policies() {
        assert!(CachePolicy::SinkWindow { n_sinks: 0, window: 0 }.validate().is_err());
        assert!(CachePolicy::UniformDecay { gamma: 0.0 }.validate().is_err());
        assert!(CachePolicy::UniformDecay { gamma: 1.5 }.validate().is_err());
        assert!(CachePolicy::AttentionPrune { keep: 0 }.validate().is_ok());
    }

    #[test]
    fn bytes_counts_keys_and_values() {
        let mut c = KvCache::<f64>::new(2, 1, 2, CachePolicy::FoldAccumulate).unwrap();
        assert_eq!(c.bytes(), 0);
        c.append(rows(0, 3, 2)).unwrap();
        assert_eq!(c.bytes(), 2 * 3 * 2 * 2 * 8);
    }
}
