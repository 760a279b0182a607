//! Shared test oracles: a straight-loop f64 transformer and small helpers.
#![allow(dead_code)]

use kvfold::{ModelConfig, Tensor, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn config(n_layers: usize, n_heads: usize, n_kv_heads: usize, d_head: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        n_layers,
        n_heads,
        n_kv_heads,
        d_model: n_heads * d_head,
        d_head,
        d_ff: 3 * n_heads * d_head / 2,
        vocab_size: vocab,
        rope_theta: 10_000.0,
        norm_eps: 1e-5,
        max_position: 1 << 16,
    }
}

/// Synthetic weights with non-trivial norm gains, so the oracle exercises them.
pub fn weights(cfg: &ModelConfig, seed: u64) -> Weights<f64> {
    let mut w = Weights::<f64>::synthetic(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let mut jitter = |t: &mut Tensor<f64>| {
        for v in t.data_mut() {
            *v = rng.random_range(0.5..1.5);
        }
    };
    for l in &mut w.layers {
        jitter(&mut l.attn_norm);
        jitter(&mut l.mlp_norm);
    }
    jitter(&mut w.final_norm);
    w
}

pub fn random_tokens(n: usize, vocab: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
}

fn rms(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

fn vecmat(x: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(rows, x.len());
    (0..cols).map(|j| (0..rows).map(|i| x[i] * w.data()[i * cols + j]).sum()).collect()
}

/// Rotates channel pairs `(2i, 2i+1)` of one head vector by `pos · theta^(-2i/d)`.
pub fn rope(v: &[f64], pos: usize, theta: f64) -> Vec<f64> {
    let d = v.len();
    let mut out = v.to_vec();
    for i in 0..d / 2 {
        let angle = pos as f64 * theta.powf(-((2 * i) as f64) / d as f64);
        let (s, c) = angle.sin_cos();
        out[2 * i] = v[2 * i] * c - v[2 * i + 1] * s;
        out[2 * i + 1] = v[2 * i] * s + v[2 * i + 1] * c;
    }
    out
}

/// Logits for every token of `tokens` placed at `positions`, where query `i`
/// attends to key `j` exactly when `visible(i, j)`.
pub fn reference_logits(
    cfg: &ModelConfig,
    w: &Weights<f64>,
    tokens: &[u32],
    positions: &[usize],
    visible: &dyn Fn(usize, usize) -> bool,
) -> Vec<Vec<f64>> {
    let n = tokens.len();
    let dh = cfg.d_head;
    let group = cfg.n_heads / cfg.n_kv_heads;
    let mut x: Vec<Vec<f64>> = tokens.iter().map(|&t| w.token_embedding.row(t as usize).to_vec()).collect();
    for lw in &w.layers {
        let h: Vec<Vec<f64>> = x.iter().map(|r| rms(r, lw.attn_norm.data(), cfg.norm_eps)).collect();
        let heads = |m: &Tensor<f64>, count: usize, rotate: bool| -> Vec<Vec<Vec<f64>>> {
            h.iter()
                .enumerate()
                .map(|(i, r)| {
                    let full = vecmat(r, m);
                    (0..count)
                        .map(|hd| {
                            let v = &full[hd * dh..(hd + 1) * dh];
                            if rotate { rope(v, positions[i], cfg.rope_theta) } else { v.to_vec() }
                        })
                        .collect()
                })
                .collect()
        };
        let q = heads(&lw.wq, cfg.n_heads, true);
        let k = heads(&lw.wk, cfg.n_kv_heads, true);
        let v = heads(&lw.wv, cfg.n_kv_heads, false);
        let mut attn = vec![vec![0.0; cfg.n_heads * dh]; n];
        for i in 0..n {
            for hd in 0..cfg.n_heads {
                let g = hd / group;
                let keys: Vec<usize> = (0..n).filter(|&j| visible(i, j)).collect();
                let scores: Vec<f64> = keys
                    .iter()
                    .map(|&j| q[i][hd].iter().zip(&k[j][g]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (&j, e) in keys.iter().zip(&exps) {
                    for c in 0..dh {
                        attn[i][hd * dh + c] += e / z * v[j][g][c];
                    }
                }
            }
        }
        for i in 0..n {
            let o = vecmat(&attn[i], &lw.wo);
            x[i].iter_mut().zip(o).for_each(|(a, b)| *a += b);
            let h2 = rms(&x[i], lw.mlp_norm.data(), cfg.norm_eps);
            let gate = vecmat(&h2, &lw.w_gate);
            let up = vecmat(&h2, &lw.w_up);
            let act: Vec<f64> = gate.iter().zip(&up).map(|(g, u)| g / (1.0 + (-g).exp()) * u).collect();
            let down = vecmat(&act, &lw.w_down);
            x[i].iter_mut().zip(down).for_each(|(a, b)| *a += b);
        }
    }
    x.iter().map(|r| vecmat(&rms(r, w.final_norm.data(), cfg.norm_eps), &w.lm_head)).collect()
}

/// Causal logits with positions `0..n`.
pub fn reference_causal(cfg: &ModelConfig, w: &Weights<f64>, tokens: &[u32]) -> Vec<Vec<f64>> {
    let positions: Vec<usize> = (0..tokens.len()).collect();
    reference_logits(cfg, w, tokens, &positions, &|i, j| j <= i)
}

/// `max |a - b| / max |b|` over one row.
pub fn row_rel_diff<A: Copy + Into<f64>>(a: &[A], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(&x, y)| (x.into() - y).abs()).fold(0.0, f64::max) / scale
}

/// Largest [`row_rel_diff`] over all rows.
pub fn max_rel_diff<A: Copy + Into<f64>>(a: &[Vec<A>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| row_rel_diff(x, y)).fold(0.0, f64::max)
}

/// Rows of a logits tensor as owned vectors.
pub fn rows<T: kvfold::Scalar>(t: &Tensor<T>) -> Vec<Vec<T>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Independent model of which positions a sink+window cache holds after
/// consuming chunks of the given lengths.
pub fn simulate_sink_window(chunk_lens: &[usize], n_sinks: usize, window: usize) -> Vec<usize> {
    let mut held: Vec<usize> = vec![];
    let mut next = 0;
    for &len in chunk_lens {
        held.extend(next..next + len);
        next += len;
        if held.len() > n_sinks + window {
            let sinks: Vec<usize> = held[..n_sinks].to_vec();
            let recent: Vec<usize> = held[held.len() - window..].to_vec();
            held = sinks.into_iter().chain(recent).collect();
        }
    }
    held
}
