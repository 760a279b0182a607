//! Numeric kernels.
//!
//! Every kernel is a pure function of its inputs. Reductions run sequentially
//! in index order, so identical inputs give bit-identical outputs. Outputs
//! pass through the caller's [`Rounding`] and are checked for NaN/Inf.

use crate::error::{Error, Result};
use crate::precision::{Rounding, Scalar};
use crate::tensor::Tensor;

fn finish<T: Scalar>(kernel: &'static str, mut out: Vec<T>, rounding: Rounding) -> Result<Vec<T>> {
    rounding.apply_slice(&mut out);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { kernel });
    }
    Ok(out)
}

fn dims2<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    t.expect_rank(2, what)?;
    Ok((t.shape()[0], t.shape()[1]))
}

/// `a[m×k] · b[k×n]`.
///
/// Each output element accumulates `a[i][p]·b[p][j]` for `p = 0, 1, …, k-1`
/// in that order.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, rounding: Rounding) -> Result<Tensor<T>> {
    let (m, k) = dims2(a, "matmul lhs")?;
    let (k2, n) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul inner dims {k} vs {k2}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for (i, c_row) in out.chunks_exact_mut(n.max(1)).enumerate().take(m) {
        let a_row = &ad[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &bd[p * n..(p + 1) * n];
            for (c, &b) in c_row.iter_mut().zip(b_row) {
                *c += a_ip * b;
            }
        }
    }
    Tensor::new(vec![m, n], finish("matmul", out, rounding)?)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = dims2(a, "transpose")?;
    let d = a.data();
    Ok(Tensor::from_fn(vec![n, m], |idx| {
        let (j, i) = (idx / m, idx % m);
        d[i * n + j]
    }))
}

/// Row-wise softmax restricted to the visible entries.
///
/// `visible` has one flag per element (row-major, same shape as `x`); `None`
/// means everything is visible. Hidden entries are excluded from the support
/// and come out as exactly zero.
pub fn softmax_rows<T: Scalar>(
    x: &Tensor<T>,
    visible: Option<&[bool]>,
    rounding: Rounding,
) -> Result<Tensor<T>> {
    let (m, n) = dims2(x, "softmax")?;
    if let Some(v) = visible {
        if v.len() != m * n {
            return Err(Error::Shape(format!("mask has {} entries, logits {}", v.len(), m * n)));
        }
    }
    let is_visible = |idx: usize| visible.is_none_or(|v| v[idx]);
    let xd = x.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &xd[i * n..(i + 1) * n];
        let mut max: Option<T> = None;
        for (j, &v) in row.iter().enumerate() {
            if is_visible(i * n + j) {
                max = Some(max.map_or(v, |m: T| m.max(v)));
            }
        }
        let max = max.ok_or(Error::FullyMasked { row: i })?;
        let dst = &mut out[i * n..(i + 1) * n];
        let mut sum = T::zero();
        for (j, &v) in row.iter().enumerate() {
            if is_visible(i * n + j) {
                let e = (v - max).exp();
                dst[j] = e;
                sum += e;
            }
        }
        for (j, d) in dst.iter_mut().enumerate() {
            if is_visible(i * n + j) {
                *d /= sum;
            }
        }
    }
    Tensor::new(vec![m, n], finish("softmax_rows", out, rounding)?)
}

/// `x / sqrt(mean(x²) + eps) · gain`.
pub fn rms_norm<T: Scalar>(x: &[T], gain: &[T], eps: T, rounding: Rounding) -> Result<Vec<T>> {
    if x.len() != gain.len() {
        return Err(Error::Shape(format!("rms_norm lengths {} vs {}", x.len(), gain.len())));
    }
    let mut ss = T::zero();
    for &v in x {
        ss += v * v;
    }
    let n = T::from_usize(x.len().max(1)).expect("length fits scalar");
    let inv = T::one() / (ss / n + eps).sqrt();
    let out = x.iter().zip(gain).map(|(&v, &g)| v * inv * g).collect();
    finish("rms_norm", out, rounding)
}

/// [`rms_norm`] applied to each leading-axis row.
pub fn rms_norm_rows<T: Scalar>(
    x: &Tensor<T>,
    gain: &[T],
    eps: T,
    rounding: Rounding,
) -> Result<Tensor<T>> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        out.extend(rms_norm(x.row(i), gain, eps, rounding)?);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Rotary embedding over a `[tokens × heads × d_head]` tensor.
///
/// Channel pair `(2i, 2i+1)` of a token at absolute position `p` is rotated by
/// `p · theta^(-2i/d_head)`. Angles are evaluated in f64.
pub fn rope_apply<T: Scalar>(
    x: &Tensor<T>,
    positions: &[usize],
    theta: f64,
    rounding: Rounding,
) -> Result<Tensor<T>> {
    x.expect_rank(3, "rope")?;
    let (tokens, heads, d_head) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if d_head % 2 != 0 {
        return Err(Error::OddHeadDim(d_head));
    }
    if positions.len() != tokens {
        return Err(Error::Shape(format!(
            "rope: {} positions for {tokens} tokens",
            positions.len()
        )));
    }
    let half = d_head / 2;
    let inv_freq: Vec<f64> = (0..half)
        .map(|i| theta.powf(-2.0 * i as f64 / d_head as f64))
        .collect();
    let mut out = x.data().to_vec();
    for (t, &pos) in positions.iter().enumerate() {
        let rot: Vec<(T, T)> = inv_freq
            .iter()
            .map(|f| {
                let (s, c) = (pos as f64 * f).sin_cos();
                (T::from_f64_lossy(c), T::from_f64_lossy(s))
            })
            .collect();
        for h in 0..heads {
            let base = (t * heads + h) * d_head;
            for (i, &(c, s)) in rot.iter().enumerate() {
                let (a, b) = (out[base + 2 * i], out[base + 2 * i + 1]);
                out[base + 2 * i] = a * c - b * s;
                out[base + 2 * i + 1] = a * s + b * c;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), finish("rope_apply", out, rounding)?)
}

/// `x · sigmoid(x)` elementwise.
pub fn silu<T: Scalar>(x: &Tensor<T>, rounding: Rounding) -> Result<Tensor<T>> {
    let out = x.data().iter().map(|&v| v / (T::one() + (-v).exp())).collect();
    Tensor::new(x.shape().to_vec(), finish("silu", out, rounding)?)
}

fn zip_with<T: Scalar>(
    kernel: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    rounding: Rounding,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{kernel}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), finish(kernel, out, rounding)?)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, rounding: Rounding) -> Result<Tensor<T>> {
    zip_with("mul", a, b, rounding, |x, y| x * y)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, rounding: Rounding) -> Result<Tensor<T>> {
    zip_with("add", a, b, rounding, |x, y| x + y)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, s: T, rounding: Rounding) -> Result<Tensor<T>> {
    let out = x.data().iter().map(|&v| v * s).collect();
    Tensor::new(x.shape().to_vec(), finish("scale", out, rounding)?)
}

/// Snap every element to the bf16 grid.
pub fn round_emulated_bf16<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| v.round_bf16()).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape unchanged")
}
