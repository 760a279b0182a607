//! Symmetric absmax quantization round trip.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum QuantBits {
    Int4,
    Int8,
}

impl QuantBits {
    pub fn bits(self) -> u32 {
        match self {
            Self::Int4 => 4,
            Self::Int8 => 8,
        }
    }

    /// Largest code magnitude, `2^(bits-1) - 1`.
    pub fn max_code(self) -> i32 {
        (1 << (self.bits() - 1)) - 1
    }
}

impl TryFrom<u8> for QuantBits {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        match b {
            4 => Ok(Self::Int4),
            8 => Ok(Self::Int8),
            other => Err(Error::Policy(format!("quantization bits must be 4 or 8, got {other}"))),
        }
    }
}

impl From<QuantBits> for u8 {
    fn from(b: QuantBits) -> u8 {
        b.bits() as u8
    }
}

/// Integer codes and scale of one quantized group.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGroup {
    pub codes: Vec<i32>,
    pub scale: f64,
}

impl QuantGroup {
    pub fn quantize(values: &[f64], bits: QuantBits) -> Self {
        let absmax = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let qmax = bits.max_code();
        if absmax == 0.0 {
            return Self { codes: vec![0; values.len()], scale: 0.0 };
        }
        let scale = absmax / qmax as f64;
        let codes = values
            .iter()
            .map(|&v| ((v / scale).round() as i32).clamp(-qmax, qmax))
            .collect();
        Self { codes, scale }
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|&q| q as f64 * self.scale).collect()
    }
}

/// Round-trips a `[rows × heads × channels]` tensor through `bits`-bit codes.
/// Each `(head, channel)` column over the rows is one group with its own scale.
pub fn quantize_roundtrip<T: Scalar>(x: &Tensor<T>, bits: QuantBits) -> Result<Tensor<T>> {
    x.expect_rank(3, "quantize_roundtrip")?;
    let rows = x.rows();
    let width = x.row_width();
    let mut out = x.data().to_vec();
    let mut column = Vec::with_capacity(rows);
    for col in 0..width {
        column.clear();
        column.extend((0..rows).map(|r| x.data()[r * width + col].as_f64()));
        let group = QuantGroup::quantize(&column, bits);
        for (r, v) in group.dequantize().into_iter().enumerate() {
            out[r * width + col] = T::from_f64_lossy(v);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
