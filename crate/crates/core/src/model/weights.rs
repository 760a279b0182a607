//! Dense parameters and the seeded synthetic initializer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::precision::Scalar;
use crate::tensor::Tensor;

/// Parameters of one transformer block. Projections multiply on the right
/// (`x · W`), so `wq` is `[d_model × n_heads·d_head]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub mlp_norm: Tensor<T>,
    pub w_gate: Tensor<T>,
    pub w_up: Tensor<T>,
    pub w_down: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub token_embedding: Tensor<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Tensor<T>,
    pub lm_head: Tensor<T>,
}

impl<T: Scalar> Weights<T> {
    /// Seeded Gaussian init: projections scaled by `1/sqrt(fan_in)`, unit-variance
    /// embeddings, unit norm gains. Same `(config, seed)` gives the same weights.
    pub fn synthetic(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gaussian = |shape: Vec<usize>, std: f64| {
            Tensor::from_fn(shape, |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::from_f64_lossy(z * std)
            })
        };
        let (d, ff, v) = (config.d_model, config.d_ff, config.vocab_size);
        let inv = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let token_embedding = gaussian(vec![v, d], 1.0);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                attn_norm: Tensor::from_fn(vec![d], |_| T::one()),
                wq: gaussian(vec![d, config.q_width()], inv(d)),
                wk: gaussian(vec![d, config.kv_width()], inv(d)),
                wv: gaussian(vec![d, config.kv_width()], inv(d)),
                wo: gaussian(vec![config.q_width(), d], inv(config.q_width())),
                mlp_norm: Tensor::from_fn(vec![d], |_| T::one()),
                w_gate: gaussian(vec![d, ff], inv(d)),
                w_up: gaussian(vec![d, ff], inv(d)),
                w_down: gaussian(vec![ff, d], inv(ff)),
            });
        }
        let lm_head = gaussian(vec![d, v], inv(d));
        Ok(Self {
            token_embedding,
            layers,
            final_norm: Tensor::from_fn(vec![d], |_| T::one()),
            lm_head,
        })
    }

    /// Canonical `(name, tensor)` pairs in file order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layer.{i}.{s}");
            out.extend([
                (p("attn_norm"), &l.attn_norm),
                (p("attn.wq"), &l.wq),
                (p("attn.wk"), &l.wk),
                (p("attn.wv"), &l.wv),
                (p("attn.wo"), &l.wo),
                (p("mlp_norm"), &l.mlp_norm),
                (p("mlp.w_gate"), &l.w_gate),
                (p("mlp.w_up"), &l.w_up),
                (p("mlp.w_down"), &l.w_down),
            ]);
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    /// Checks every tensor's shape against `config` and that all entries are finite.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        if self.layers.len() != config.n_layers {
            return Err(Error::LayerCount { expected: config.n_layers, got: self.layers.len() });
        }
        for (name, tensor) in self.named_tensors() {
            let want = expected_shape(config, &name)
                .ok_or_else(|| Error::Format(format!("unknown tensor `{name}`")))?;
            if tensor.shape() != want.as_slice() {
                return Err(Error::Shape(format!(
                    "{name}: expected {want:?}, got {:?}",
                    tensor.shape()
                )));
            }
            if !tensor.all_finite() {
                return Err(Error::Format(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        Weights {
            token_embedding: self.token_embedding.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_norm: l.attn_norm.cast(),
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    mlp_norm: l.mlp_norm.cast(),
                    w_gate: l.w_gate.cast(),
                    w_up: l.w_up.cast(),
                    w_down: l.w_down.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
            lm_head: self.lm_head.cast(),
        }
    }

    pub(crate) fn for_each_mut(&mut self, mut f: impl FnMut(&mut Tensor<T>)) {
        f(&mut self.token_embedding);
        for l in &mut self.layers {
            for t in [
                &mut l.attn_norm,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.mlp_norm,
                &mut l.w_gate,
                &mut l.w_up,
                &mut l.w_down,
            ] {
                f(t);
            }
        }
        f(&mut self.final_norm);
        f(&mut self.lm_head);
    }
}

/// Shape a canonical tensor name must have under `config`.
pub fn expected_shape(config: &ModelConfig, name: &str) -> Option<Vec<usize>> {
    let (d, ff, v) = (config.d_model, config.d_ff, config.vocab_size);
    match name {
        "token_embedding" => return Some(vec![v, d]),
        "final_norm" => return Some(vec![d]),
        "lm_head" => return Some(vec![d, v]),
        _ => {}
    }
    let rest = name.strip_prefix("layer.")?;
    let (idx, field) = rest.split_once('.')?;
    if idx.parse::<usize>().ok()? >= config.n_layers {
        return None;
    }
    Some(match field {
        "attn_norm" | "mlp_norm" => vec![d],
        "attn.wq" => vec![d, config.q_width()],
        "attn.wk" | "attn.wv" => vec![d, config.kv_width()],
        "attn.wo" => vec![config.q_width(), d],
        "mlp.w_gate" | "mlp.w_up" => vec![d, ff],
        "mlp.w_down" => vec![ff, d],
        _ => return None,
    })
}
