//! Little-endian binary container shared by weight files and fold checkpoints.
//!
//! After a file-specific magic, version and fixed header comes a tensor
//! directory and then the raw payloads:
//!
//! ```text
//! u32 n_tensors
//! n_tensors × { u32 name_len, name (UTF-8), u8 dtype, u8 rank, u64 dims[rank], u64 offset }
//! payloads, row-major little-endian, at the absolute byte offsets above
//! ```

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::precision::{DType, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl RawTensor {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        Self { name: name.into(), dtype: T::DTYPE, shape: t.shape().to_vec(), bytes }
    }

    /// Stores `t` as f32 regardless of its scalar type.
    pub fn from_tensor_f32<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Self::from_tensor(name, &t.cast::<f32>())
    }

    pub fn from_u64s(name: impl Into<String>, values: &[u64]) -> Self {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self { name: name.into(), dtype: DType::U64, shape: vec![values.len()], bytes }
    }

    pub fn from_f64s(name: impl Into<String>, values: &[f64]) -> Self {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self { name: name.into(), dtype: DType::F64, shape: vec![values.len()], bytes }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Decodes into a tensor of `T`, widening or narrowing float payloads.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data = match self.dtype {
            DType::F32 => self.bytes.chunks_exact(4).map(|b| T::from_f64_lossy(f32::read_le(b) as f64)).collect(),
            DType::F64 if T::DTYPE == DType::F64 => self.bytes.chunks_exact(8).map(T::read_le).collect(),
            DType::F64 => self.bytes.chunks_exact(8).map(|b| T::from_f64_lossy(f64::read_le(b))).collect(),
            DType::U64 => {
                return Err(Error::Format(format!("{} is not a float tensor", self.name)));
            }
        };
        Tensor::new(self.shape.clone(), data)
    }

    pub fn to_u64s(&self) -> Result<Vec<u64>> {
        if self.dtype != DType::U64 {
            return Err(Error::Format(format!("{} is not a u64 tensor", self.name)));
        }
        Ok(self.bytes.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().unwrap())).collect())
    }

    pub fn to_f64s(&self) -> Result<Vec<f64>> {
        if self.dtype != DType::F64 {
            return Err(Error::Format(format!("{} is not an f64 tensor", self.name)));
        }
        Ok(self.bytes.chunks_exact(8).map(f64::read_le).collect())
    }
}

/// Appends the tensor directory and payloads to `buf`, which already holds
/// the magic and header.
pub fn write_tensors(buf: &mut Vec<u8>, tensors: &[RawTensor]) {
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let dir_len: usize = tensors.iter().map(|t| 4 + t.name.len() + 2 + 8 * t.shape.len() + 8).sum();
    let mut offset = (buf.len() + dir_len) as u64;
    for t in tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(t.dtype as u8);
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&offset.to_le_bytes());
        offset += t.bytes.len() as u64;
    }
    for t in tensors {
        buf.extend_from_slice(&t.bytes);
    }
}

/// Cursor over a byte buffer with bounds-checked little-endian reads.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads the directory and resolves every payload. Names must be unique
    /// and payloads must lie inside the file without overlapping.
    pub fn tensors(&mut self) -> Result<Vec<RawTensor>> {
        let n = self.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        let mut names = HashSet::new();
        for _ in 0..n {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            if !names.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate tensor `{name}`")));
            }
            let code = self.u8()?;
            let dtype = DType::from_code(code)
                .ok_or_else(|| Error::Format(format!("{name}: unknown dtype {code}")))?;
            let rank = self.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(self.u64()?).map_err(|_| Error::Format("dim too large".into()))?);
            }
            let offset = self.u64()?;
            entries.push((name, dtype, shape, offset));
        }
        let mut spans = Vec::with_capacity(entries.len());
        let mut out = Vec::with_capacity(entries.len());
        for (name, dtype, shape, offset) in entries {
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("{name}: shape overflows")))?;
            let size = numel
                .checked_mul(dtype.size())
                .ok_or_else(|| Error::Format(format!("{name}: size overflows")))?;
            let start = usize::try_from(offset).map_err(|_| Error::Format("offset too large".into()))?;
            let end = start
                .checked_add(size)
                .filter(|&e| e <= self.bytes.len())
                .ok_or_else(|| Error::Format(format!("{name}: payload out of bounds")))?;
            if start < self.pos {
                return Err(Error::Format(format!("{name}: payload overlaps the header")));
            }
            spans.push((start, end, name.clone()));
            out.push(RawTensor { name, dtype, shape, bytes: self.bytes[start..end].to_vec() });
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Format(format!("payloads of {} and {} overlap", w[0].2, w[1].2)));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_round_trip() {
        let t = Tensor::<f32>::from_fn(vec![2, 3], |i| i as f32);
        let tensors = vec![
            RawTensor::from_tensor("a", &t),
            RawTensor::from_u64s("pos", &[1, 5, 9]),
        ];
        let mut buf = b"TEST".to_vec();
        write_tensors(&mut buf, &tensors);
        let mut r = Reader::new(&buf);
        r.expect_magic(b"TEST").unwrap();
        let back = r.tensors().unwrap();
        assert_eq!(back, tensors);
        assert_eq!(back[0].to_tensor::<f32>().unwrap(), t);
        assert_eq!(back[1].to_u64s().unwrap(), vec![1, 5, 9]);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let t = Tensor::<f32>::zeros(vec![4]);
        let mut buf = b"TEST".to_vec();
        write_tensors(&mut buf, &[RawTensor::from_tensor("a", &t)]);
        buf.truncate(buf.len() - 1);
        let mut r = Reader::new(&buf);
        r.expect_magic(b"TEST").unwrap();
        assert!(matches!(r.tensors(), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_magic() {
        let mut r = Reader::new(b"NOPE");
        assert!(r.expect_magic(b"KVFW").is_err());
    }
}
