use crate::error::{Error, Result};
use crate::precision::Scalar;
use crate::tensor::Tensor;

/// Keys and values of one layer, one row per token.
///
/// Keys are stored post-RoPE, so rows can be carried between chunks or
/// dropped without re-rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv<T> {
    keys: Tensor<T>,
    values: Tensor<T>,
    positions: Vec<usize>,
}

impl<T: Scalar> LayerKv<T> {
    pub fn empty(n_kv_heads: usize, d_head: usize) -> Self {
        Self {
            keys: Tensor::zeros(vec![0, n_kv_heads, d_head]),
            values: Tensor::zeros(vec![0, n_kv_heads, d_head]),
            positions: Vec::new(),
        }
    }

    /// `keys`/`values` are `[seq × n_kv_heads × d_head]`; `positions` must be
    /// strictly increasing with one entry per row.
    pub fn new(keys: Tensor<T>, values: Tensor<T>, positions: Vec<usize>) -> Result<Self> {
        keys.expect_rank(3, "layer keys")?;
        if keys.shape() != values.shape() {
            return Err(Error::Shape(format!(
                "keys {:?} vs values {:?}",
                keys.shape(),
                values.shape()
            )));
        }
        if positions.len() != keys.rows() {
            return Err(Error::Shape(format!(
                "{} positions for {} rows",
                positions.len(),
                keys.rows()
            )));
        }
        if let Some(w) = positions.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::PositionOrder { position: w[1], last: w[0] });
        }
        Ok(Self { keys, values, positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn keys(&self) -> &Tensor<T> {
        &self.keys
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn n_kv_heads(&self) -> usize {
        self.keys.shape()[1]
    }

    pub fn d_head(&self) -> usize {
        self.keys.shape()[2]
    }

    pub fn last_position(&self) -> Option<usize> {
        self.positions.last().copied()
    }

    pub(crate) fn append(&mut self, other: &Self) -> Result<()> {
        if let (Some(last), Some(&first)) = (self.last_position(), other.positions.first()) {
            if first <= last {
                return Err(Error::PositionOrder { position: first, last });
            }
        }
        self.keys.extend_rows(&other.keys)?;
        self.values.extend_rows(&other.values)?;
        self.positions.extend_from_slice(&other.positions);
        Ok(())
    }

    pub(crate) fn retain_rows(&mut self, keep: &[bool]) {
        self.keys.retain_rows(|i| keep[i]);
        self.values.retain_rows(|i| keep[i]);
        let mut i = 0;
        self.positions.retain(|_| {
            i += 1;
            keep[i - 1]
        });
    }

    pub(crate) fn keys_mut(&mut self) -> &mut Tensor<T> {
        &mut self.keys
    }

    pub(crate) fn values_mut(&mut self) -> &mut Tensor<T> {
        &mut self.values
    }
}
