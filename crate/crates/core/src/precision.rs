//! Scalar types and precision modes.
//!
//! The engine computes natively in `f32` or `f64`. Reduced precision is
//! emulated: in [`Rounding::Bf16`] every kernel output is snapped to the
//! bfloat16 grid (8-bit exponent, 7-bit mantissa) with round-to-nearest-even.
//! Intermediates inside a kernel are never rounded.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Element type code shared by the weight and checkpoint file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U64 = 2,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::F32),
            1 => Some(Self::F64),
            2 => Some(Self::U64),
            _ => None,
        }
    }

    pub const fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 | Self::U64 => 8,
        }
    }
}

/// Floating point scalar the engine can run on.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// Round to the nearest bfloat16-representable value (ties to even).
    fn round_bf16(self) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from the first `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn round_bf16(self) -> Self {
        if self.is_nan() {
            return self;
        }
        let bits = self.to_bits();
        let lsb = (bits >> 16) & 1;
        f32::from_bits(bits.wrapping_add(0x7FFF + lsb) & 0xFFFF_0000)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    // Same 7-bit mantissa grid; the exponent range stays that of f64.
    fn round_bf16(self) -> Self {
        if self.is_nan() {
            return self;
        }
        const DROP: u32 = 52 - 7;
        let bits = self.to_bits();
        let lsb = (bits >> DROP) & 1;
        let half = (1u64 << (DROP - 1)) - 1;
        f64::from_bits(bits.wrapping_add(half + lsb) & !((1u64 << DROP) - 1))
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Output rounding applied by every kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rounding {
    #[default]
    Native,
    Bf16,
}

impl Rounding {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Self::Native => x,
            Self::Bf16 => x.round_bf16(),
        }
    }

    pub fn apply_slice<T: Scalar>(self, xs: &mut [T]) {
        if self == Self::Bf16 {
            for x in xs {
                *x = x.round_bf16();
            }
        }
    }
}

/// Run-level precision selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecisionMode {
    NativeF32,
    NativeF64,
    /// f32 arithmetic with bf16 rounding of kernel outputs.
    EmulatedBf16,
}

impl PrecisionMode {
    pub fn rounding(self) -> Rounding {
        match self {
            Self::EmulatedBf16 => Rounding::Bf16,
            Self::NativeF32 | Self::NativeF64 => Rounding::Native,
        }
    }

    /// Tolerance on per-token NLL when comparing two routes that should agree.
    pub fn nll_tolerance(self) -> f64 {
        match self {
            Self::NativeF64 => 1e-9,
            Self::NativeF32 => 1e-4,
            Self::EmulatedBf16 => 5e-2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NativeF32 => "f32",
            Self::NativeF64 => "f64",
            Self::EmulatedBf16 => "bf16",
        }
    }
}

impl FromStr for PrecisionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" | "native-f32" => Ok(Self::NativeF32),
            "f64" | "native-f64" => Ok(Self::NativeF64),
            "bf16" | "emulated-bf16" => Ok(Self::EmulatedBf16),
            other => Err(format!("unknown precision `{other}` (expected f32, f64 or bf16)")),
        }
    }
}

impl Display for PrecisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Nearest grid points by enumeration: all f32 values whose low 16 bits are zero
    /// around `x`, picking the closest and breaking ties to an even mantissa.
    fn bf16_oracle(x: f32) -> f32 {
        let hi = x.to_bits() >> 16;
        let candidates = [hi.saturating_sub(1), hi, hi + 1].map(|h| f32::from_bits(h << 16));
        let mut best = candidates[0];
        for &c in &candidates[1..] {
            let (dc, db) = ((c - x).abs(), (best - x).abs());
            if dc < db || (dc == db && (c.to_bits() >> 16) & 1 == 0) {
                best = c;
            }
        }
        best
    }

    #[test]
    fn bf16_exact_values_unchanged() {
        assert_eq!(1.0f32.round_bf16(), 1.0);
        assert_eq!((-2.5f32).round_bf16(), -2.5);
        assert_eq!(0.0f32.round_bf16(), 0.0);
    }

    #[test]
    fn bf16_tie_rounds_to_even() {
        // 1 + 2^-8 sits exactly between 1.0 and 1 + 2^-7; 1.0 has the even mantissa.
        let x = 1.0f32 + 1.0 / 256.0;
        assert_eq!(x.round_bf16(), 1.0);
        assert_eq!(x.round_bf16(), bf16_oracle(x));
        // 1 + 3*2^-8 ties between 1+2^-7 (odd) and 1+2^-6 (even).
        let y = 1.0f32 + 3.0 / 256.0;
        assert_eq!(y.round_bf16(), 1.015_625);
        assert_eq!((1.0f64 + 1.0 / 256.0).round_bf16(), 1.0);
    }

    #[test]
    fn bf16_matches_grid_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20_000 {
            let x: f32 = rng.random_range(-1e4f32..1e4);
            let r = x.round_bf16();
            assert_eq!(r, bf16_oracle(x), "x={x}");
            assert_eq!(r.round_bf16(), r);
            assert_eq!((x as f64).round_bf16() as f32, r);
        }
    }

    #[test]
    fn precision_parse() {
        assert_eq!("bf16".parse::<PrecisionMode>().unwrap(), PrecisionMode::EmulatedBf16);
        assert!("f16".parse::<PrecisionMode>().is_err());
    }
}
