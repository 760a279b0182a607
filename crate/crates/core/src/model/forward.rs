//! Chunk forward pass over an optional cached prefix.

use super::config::ModelConfig;
use super::kv::LayerKv;
use super::weights::Weights;
use crate::error::{Error, Result};
use crate::kernels;
use crate::precision::{Rounding, Scalar};
use crate::tensor::Tensor;

/// A model ready to run: validated config, weights and the kernel rounding mode.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    weights: Weights<T>,
    rounding: Rounding,
}

/// Result of [`Model::forward_chunk`].
#[derive(Debug, Clone)]
pub struct ChunkOutput<T> {
    /// `[chunk_len × vocab]` next-token logits.
    pub logits: Tensor<T>,
    /// Per-layer keys/values for exactly the chunk's tokens.
    pub new_kv: Vec<LayerKv<T>>,
    /// Attention probability received by each key row (prefix rows then chunk
    /// rows), summed over layers, heads and query rows. Only filled when requested.
    pub attention_mass: Option<Vec<f64>>,
}

/// Visibility of keys for a chunk: `[chunk_len × (prefix_len + chunk_len)]`,
/// row-major. Query `i` sees every prefix row and chunk rows `0..=i`.
pub fn support_mask(prefix_len: usize, chunk_len: usize) -> Vec<bool> {
    let s = prefix_len + chunk_len;
    let mut mask = vec![false; chunk_len * s];
    for i in 0..chunk_len {
        mask[i * s..i * s + prefix_len + i + 1].fill(true);
    }
    mask
}

impl<T: Scalar> Model<T> {
    /// Under [`Rounding::Bf16`] the weights are snapped to the bf16 grid.
    pub fn new(config: ModelConfig, mut weights: Weights<T>, rounding: Rounding) -> Result<Self> {
        weights.validate(&config)?;
        if rounding == Rounding::Bf16 {
            weights.for_each_mut(|t| *t = kernels::round_emulated_bf16(t));
        }
        Ok(Self { config, weights, rounding })
    }

    pub fn synthetic(config: ModelConfig, seed: u64, rounding: Rounding) -> Result<Self> {
        let weights = Weights::synthetic(&config, seed)?;
        Self::new(config, weights, rounding)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn empty_kv(&self) -> Vec<LayerKv<T>> {
        (0..self.config.n_layers)
            .map(|_| LayerKv::empty(self.config.n_kv_heads, self.config.d_head))
            .collect()
    }

    pub fn forward_chunk(
        &self,
        tokens: &[u32],
        prefix: &[LayerKv<T>],
        start_position: usize,
    ) -> Result<ChunkOutput<T>> {
        self.forward(tokens, prefix, start_position, false)
    }

    /// Same as [`forward_chunk`](Self::forward_chunk) but also returns the
    /// attention mass each key row received.
    pub fn forward_chunk_with_mass(
        &self,
        tokens: &[u32],
        prefix: &[LayerKv<T>],
        start_position: usize,
    ) -> Result<ChunkOutput<T>> {
        self.forward(tokens, prefix, start_position, true)
    }

    fn check_inputs(&self, tokens: &[u32], prefix: &[LayerKv<T>], start: usize) -> Result<()> {
        let cfg = &self.config;
        if tokens.is_empty() {
            return Err(Error::Empty("chunk tokens"));
        }
        let end = start + tokens.len();
        if end > cfg.max_position {
            return Err(Error::PositionOverflow { end, max: cfg.max_position });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange { id, vocab: cfg.vocab_size });
        }
        if !prefix.is_empty() && prefix.len() != cfg.n_layers {
            return Err(Error::LayerCount { expected: cfg.n_layers, got: prefix.len() });
        }
        for layer in prefix {
            if layer.n_kv_heads() != cfg.n_kv_heads || layer.d_head() != cfg.d_head {
                return Err(Error::Shape(format!(
                    "prefix rows are {}x{}, model expects {}x{}",
                    layer.n_kv_heads(),
                    layer.d_head(),
                    cfg.n_kv_heads,
                    cfg.d_head
                )));
            }
            if layer.len() != prefix[0].len() {
                return Err(Error::Shape("prefix layers differ in length".into()));
            }
            if let Some(last) = layer.last_position() {
                if last >= start {
                    return Err(Error::PositionOrder { position: start, last });
                }
            }
        }
        Ok(())
    }

    fn forward(
        &self,
        tokens: &[u32],
        prefix: &[LayerKv<T>],
        start: usize,
        collect_mass: bool,
    ) -> Result<ChunkOutput<T>> {
        self.check_inputs(tokens, prefix, start)?;
        let cfg = &self.config;
        let r = self.rounding;
        let (c, d) = (tokens.len(), cfg.d_model);
        let (n_heads, n_kv, dh) = (cfg.n_heads, cfg.n_kv_heads, cfg.d_head);
        let eps = T::from_f64_lossy(cfg.norm_eps);
        let positions: Vec<usize> = (start..start + c).collect();
        let prefix_len = prefix.first().map_or(0, LayerKv::len);
        let s = prefix_len + c;
        let visible = support_mask(prefix_len, c);
        let inv_sqrt = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let mut mass = collect_mass.then(|| vec![0.0f64; s]);

        let emb = &self.weights.token_embedding;
        let mut x = Tensor::new(
            vec![c, d],
            tokens.iter().flat_map(|&t| emb.row(t as usize).iter().copied()).collect(),
        )?;

        let mut new_kv = Vec::with_capacity(cfg.n_layers);
        for (l, lw) in self.weights.layers.iter().enumerate() {
            let h = kernels::rms_norm_rows(&x, lw.attn_norm.data(), eps, r)?;
            let q = kernels::matmul(&h, &lw.wq, r)?.reshape(vec![c, n_heads, dh])?;
            let q = kernels::rope_apply(&q, &positions, cfg.rope_theta, r)?;
            let k = kernels::matmul(&h, &lw.wk, r)?.reshape(vec![c, n_kv, dh])?;
            let k = kernels::rope_apply(&k, &positions, cfg.rope_theta, r)?;
            let v = kernels::matmul(&h, &lw.wv, r)?.reshape(vec![c, n_kv, dh])?;

            let cached = prefix.get(l);
            let mut attn = vec![T::zero(); c * n_heads * dh];
            for g in 0..n_kv {
                // Key/value rows for kv head g: prefix rows first, then the chunk.
                let mut kt = vec![T::zero(); dh * s];
                let mut vg = Vec::with_capacity(s * dh);
                let mut row = 0;
                let sources = cached.into_iter().map(|kv| (kv.keys(), kv.values()));
                for (keys, values) in sources.chain(std::iter::once((&k, &v))) {
                    for i in 0..keys.rows() {
                        let krow = &keys.row(i)[g * dh..(g + 1) * dh];
                        for (ch, &val) in krow.iter().enumerate() {
                            kt[ch * s + row] = val;
                        }
                        vg.extend_from_slice(&values.row(i)[g * dh..(g + 1) * dh]);
                        row += 1;
                    }
                }
                let kt = Tensor::new(vec![dh, s], kt)?;
                let vg = Tensor::new(vec![s, dh], vg)?;

                for head in g * cfg.group_size()..(g + 1) * cfg.group_size() {
                    let qh = Tensor::from_fn(vec![c, dh], |idx| {
                        let (i, ch) = (idx / dh, idx % dh);
                        q.data()[(i * n_heads + head) * dh + ch]
                    });
                    let scores = kernels::matmul(&qh, &kt, r)?;
                    let scores = kernels::scale(&scores, inv_sqrt, r)?;
                    let probs = kernels::softmax_rows(&scores, Some(&visible), r)?;
                    if let Some(m) = mass.as_mut() {
                        for i in 0..c {
                            for (acc, &p) in m.iter_mut().zip(probs.row(i)) {
                                *acc += p.as_f64();
                            }
                        }
                    }
                    let out = kernels::matmul(&probs, &vg, r)?;
                    for i in 0..c {
                        let dst = (i * n_heads + head) * dh;
                        attn[dst..dst + dh].copy_from_slice(out.row(i));
                    }
                }
            }
            let attn = Tensor::new(vec![c, n_heads * dh], attn)?;
            x = kernels::add(&x, &kernels::matmul(&attn, &lw.wo, r)?, r)?;

            let h = kernels::rms_norm_rows(&x, lw.mlp_norm.data(), eps, r)?;
            let gate = kernels::silu(&kernels::matmul(&h, &lw.w_gate, r)?, r)?;
            let up = kernels::matmul(&h, &lw.w_up, r)?;
            let act = kernels::mul(&gate, &up, r)?;
            x = kernels::add(&x, &kernels::matmul(&act, &lw.w_down, r)?, r)?;

            new_kv.push(LayerKv::new(k, v, positions.clone())?);
        }
        let x = kernels::rms_norm_rows(&x, self.weights.final_norm.data(), eps, r)?;
        let logits = kernels::matmul(&x, &self.weights.lm_head, r)?;
        Ok(ChunkOutput { logits, new_kv, attention_mass: mass })
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}
