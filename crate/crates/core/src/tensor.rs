//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::precision::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self { shape, data: (0..n).map(&mut f).collect() }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(vec![n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Number of rows along the leading axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Elements per leading-axis row.
    pub fn row_width(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.row_width();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::Shape(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Appends rows along the leading axis.
    pub fn extend_rows(&mut self, other: &Self) -> Result<()> {
        if self.shape[1..] != other.shape[1..] {
            return Err(Error::Shape(format!(
                "cannot stack {:?} onto {:?}",
                other.shape, self.shape
            )));
        }
        self.data.extend_from_slice(&other.data);
        self.shape[0] += other.shape[0];
        Ok(())
    }

    /// Keeps the leading-axis rows whose index satisfies `keep`, in order.
    pub fn retain_rows(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let w = self.row_width();
        let mut out = 0;
        for i in 0..self.rows() {
            if keep(i) {
                if out != i {
                    self.data.copy_within(i * w..(i + 1) * w, out * w);
                }
                out += 1;
            }
        }
        self.data.truncate(out * w);
        self.shape[0] = out;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64_lossy(x.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn retain_and_extend_rows() {
        let mut t = Tensor::<f64>::from_fn(vec![4, 2], |i| i as f64);
        t.retain_rows(|i| i != 1);
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 4.0, 5.0, 6.0, 7.0]);
        let extra = Tensor::from_fn(vec![1, 2], |_| 9.0);
        t.extend_rows(&extra).unwrap();
        assert_eq!(t.rows(), 4);
        assert_eq!(t.row(3), &[9.0, 9.0]);
        assert!(t.extend_rows(&Tensor::zeros(vec![1, 3])).is_err());
    }
}
