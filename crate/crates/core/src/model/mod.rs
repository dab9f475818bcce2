//! Decoder-only transformer with Mixture-of-Experts feed-forward layers.
//!
//! Each expert computes `W_down · LayerNorm(SiLU(W_up · x))`; the router
//! picks the top-k experts per token by logit and softmax-renormalizes the
//! selected logits into gate weights. No auxiliary load-balancing loss.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{BoundModel, RoutingTrace, TokenRouting};

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub const LAYERNORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoEModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_experts: usize,
    pub top_k: usize,
    pub d_ffn: usize,
    pub context_length: usize,
    pub seed: u64,
}

impl MoEModelConfig {
    /// Minutes-scale configuration used for all default runs.
    pub fn desk_default() -> Self {
        MoEModelConfig {
            vocab_size: 256,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            n_experts: 4,
            top_k: 2,
            d_ffn: 256,
            context_length: 128,
            seed: 42,
        }
    }

    /// Full-scale preset (8 experts, 6 layers, top-2). Shape tests only;
    /// not trainable in reasonable time here.
    pub fn full_size_preset() -> Self {
        MoEModelConfig {
            vocab_size: 50304,
            d_model: 512,
            n_layers: 6,
            n_heads: 8,
            n_experts: 8,
            top_k: 2,
            d_ffn: 2048,
            context_length: 256,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_experts", self.n_experts),
            ("top_k", self.top_k),
            ("d_ffn", self.d_ffn),
            ("context_length", self.context_length),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.top_k > self.n_experts {
            return Err(ModelError::Config(format!(
                "top_k {} exceeds n_experts {}",
                self.top_k, self.n_experts
            )));
        }
        if self.d_ffn < 2 || self.d_model < 2 {
            return Err(ModelError::Config(
                "layernorm requires d_model and d_ffn >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Exact number of scalar parameters implied by this config.
    pub fn param_count(&self) -> usize {
        let (v, d, f, n, ctx) = (
            self.vocab_size,
            self.d_model,
            self.d_ffn,
            self.n_experts,
            self.context_length,
        );
        let per_layer = 2 * d          // ln1
            + 4 * d * d                // wq wk wv wo
            + 2 * d                    // ln2
            + n * d                    // router
            + n * (f * d + 2 * f + d * f); // experts: w_up, ln, w_down
        v * d + ctx * d + self.n_layers * per_layer + 2 * d + d * v
    }
}

/// One named parameter tensor. `decay` marks it for decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub decay: bool,
}

pub struct MoEModel {
    cfg: MoEModelConfig,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl MoEModel {
    /// Fresh model with normal(0, 0.02) projections, unit LayerNorm gains
    /// and zero biases, drawn from the `init` substream of `cfg.seed`.
    pub fn new(cfg: MoEModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(cfg.seed, "init");
        let mut params = Vec::new();
        let (v, d, f, n, ctx) = (
            cfg.vocab_size,
            cfg.d_model,
            cfg.d_ffn,
            cfg.n_experts,
            cfg.context_length,
        );
        let mut normal = |name: &str, shape: &[usize], decay: bool, params: &mut Vec<Param>| {
            let len: usize = shape.iter().product();
            let data = (0..len)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * INIT_STD
                })
                .collect();
            params.push(Param {
                name: name.to_string(),
                shape: shape.to_vec(),
                data,
                decay,
            });
        };
        let affine = |name: &str, width: usize, params: &mut Vec<Param>| {
            params.push(Param {
                name: format!("{name}.gain"),
                shape: vec![width],
                data: vec![1.0; width],
                decay: false,
            });
            params.push(Param {
                name: format!("{name}.bias"),
                shape: vec![width],
                data: vec![0.0; width],
                decay: false,
            });
        };

        normal("tok_emb", &[v, d], true, &mut params);
        normal("pos_emb", &[ctx, d], true, &mut params);
        for l in 0..cfg.n_layers {
            affine(&format!("l{l}.ln1"), d, &mut params);
            for w in ["wq", "wk", "wv", "wo"] {
                normal(&format!("l{l}.attn.{w}"), &[d, d], true, &mut params);
            }
            affine(&format!("l{l}.ln2"), d, &mut params);
            normal(&format!("l{l}.router"), &[n, d], true, &mut params);
            for e in 0..n {
                normal(&format!("l{l}.expert{e}.w_up"), &[f, d], true, &mut params);
                affine(&format!("l{l}.expert{e}.ln"), f, &mut params);
                normal(&format!("l{l}.expert{e}.w_down"), &[d, f], true, &mut params);
            }
        }
        affine("ln_f", d, &mut params);
        normal("lm_head", &[d, v], true, &mut params);

        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        let model = MoEModel { cfg, params, index };
        debug_assert_eq!(model.num_scalars(), model.cfg.param_count());
        Ok(model)
    }

    pub(crate) fn from_parts(cfg: MoEModelConfig, params: Vec<Param>) -> Result<Self> {
        cfg.validate()?;
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(MoEModel { cfg, params, index })
    }

    pub fn config(&self) -> &MoEModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub(crate) fn param_index(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Flattened up-projection weights, per layer per expert. This is the
    /// view the regularizer and the weight-overlap metric operate on.
    pub fn expert_up_weights(&self) -> Vec<Vec<&[f64]>> {
        (0..self.cfg.n_layers)
            .map(|l| {
                (0..self.cfg.n_experts)
                    .map(|e| {
                        self.param(&format!("l{l}.expert{e}.w_up"))
                            .expect("expert weights present")
                            .data
                            .as_slice()
                    })
                    .collect()
            })
            .collect()
    }
}
