use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Key/value heads; each is shared by `n_heads / n_kv_heads` query heads.
    pub n_kv_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub rope_theta: f64,
    pub norm_eps: f64,
    pub max_position: usize,
}

impl ModelConfig {
    /// Default RoPE base.
    pub const ROPE_THETA: f64 = 10_000.0;
    /// Default RMSNorm epsilon.
    pub const NORM_EPS: f64 = 1e-5;

    /// A config with `d_head = d_model / n_heads` and default RoPE/norm constants.
    pub fn with_dims(
        n_layers: usize,
        n_heads: usize,
        n_kv_heads: usize,
        d_model: usize,
        d_ff: usize,
        vocab_size: usize,
        max_position: usize,
    ) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!("d_model {d_model} not divisible by n_heads {n_heads}")));
        }
        let c = Self {
            n_layers,
            n_heads,
            n_kv_heads,
            d_model,
            d_head: d_model / n_heads,
            d_ff,
            vocab_size,
            rope_theta: Self::ROPE_THETA,
            norm_eps: Self::NORM_EPS,
            max_position,
        };
        c.validate()?;
        Ok(c)
    }

    /// Two layers, four query heads over two key/value heads, byte vocabulary.
    pub fn tiny() -> Self {
        Self::with_dims(2, 4, 2, 32, 64, 256, 4096).expect("valid constants")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_layers == 0 || self.n_heads == 0 || self.n_kv_heads == 0 {
            return fail("layer and head counts must be positive".into());
        }
        if self.d_model != self.n_heads * self.d_head {
            return fail(format!(
                "d_model {} != n_heads {} * d_head {}",
                self.d_model, self.n_heads, self.d_head
            ));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return fail(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            ));
        }
        if !self.d_head.is_multiple_of(2) {
            return Err(Error::OddHeadDim(self.d_head));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must be at least 2".into());
        }
        if self.max_position == 0 {
            return fail("max_position must be at least 1".into());
        }
        if self.d_ff == 0 {
            return fail("d_ff must be positive".into());
        }
        if !(self.rope_theta > 0.0 && self.norm_eps > 0.0) {
            return fail("rope_theta and norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Query heads per key/value head.
    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.d_head
    }

    pub fn q_width(&self) -> usize {
        self.n_heads * self.d_head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            n_kv_heads: 2,
            d_model: 32,
            d_head: 8,
            d_ff: 64,
            vocab_size: 256,
            rope_theta: 10_000.0,
            norm_eps: 1e-5,
            max_position: 128,
        }
    }

    #[test]
    fn valid_config_passes() {
        base().validate().unwrap();
        assert_eq!(base().group_size(), 2);
    }

    #[test]
    fn invariants_are_enforced() {
        let mut c = base();
        c.n_kv_heads = 3;
        assert!(c.validate().is_err());
        let mut c = base();
        c.d_model = 31;
        assert!(c.validate().is_err());
        let mut c = base();
        c.vocab_size = 1;
        assert!(c.validate().is_err());
        let mut c = base();
        c.max_position = 0;
        assert!(c.validate().is_err());
    }
}
