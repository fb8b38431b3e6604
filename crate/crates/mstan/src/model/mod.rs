//! The risk model: linear embedding, Gaussian-kernel temporal alignment,
//! multi-scale temporal convolution, learned scale fusion, temperature-
//! controlled attention pooling, and a sigmoid risk head.
//!
//! [`forward`] composes the layers and records every intermediate in a
//! [`ForwardCache`]; [`backward`] consumes the cache and produces exact
//! gradients for all learnable tensors (verified against central finite
//! differences in the test suite).

mod backward;
mod forward;

pub use backward::backward;
pub use forward::{
    align_weights, apply_alignment, attention_pool, embed, forward, fuse_scales, multiscale_conv,
    predict_risk,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{softplus, softplus_inv, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("batch feature dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("item {item} has no real steps")]
    EmptyItem { item: usize },
}

/// Architecture hyperparameters. `tau` is the pooling temperature used
/// directly when `tau_learnable` is false, and as the initial value
/// otherwise. `align_identity` disables temporal alignment (the alignment
/// matrix becomes the identity), which exists for ablation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub d_h: usize,
    pub scales: Vec<usize>,
    pub tau: f64,
    pub tau_learnable: bool,
    pub l_max: usize,
    pub align_identity: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 8,
            d_h: 32,
            scales: vec![1, 3, 7],
            tau: 1.0,
            tau_learnable: false,
            l_max: 200,
            align_identity: false,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 {
            return Err(ModelError::InvalidConfig("d must be at least 1".into()));
        }
        if self.d_h == 0 {
            return Err(ModelError::InvalidConfig("d_h must be at least 1".into()));
        }
        if self.scales.is_empty() {
            return Err(ModelError::InvalidConfig("scales must be nonempty".into()));
        }
        if self.scales[0] == 0 {
            return Err(ModelError::InvalidConfig("scales must be positive".into()));
        }
        if !self.scales.windows(2).all(|w| w[0] < w[1]) {
            return Err(ModelError::InvalidConfig(
                "scales must be strictly increasing".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ModelError::InvalidConfig("tau must be positive".into()));
        }
        if self.l_max == 0 {
            return Err(ModelError::InvalidConfig("l_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// All learnable tensors. Positivity-constrained scalars (the alignment
/// width and, when learned, the pooling temperature) are stored as raw
/// values and mapped through softplus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Embedding matrix, d_h x d.
    pub w_e: Tensor,
    /// Embedding bias, d_h.
    pub b_e: Tensor,
    /// Raw alignment width; the effective width is softplus(sigma_raw).
    pub sigma_raw: f64,
    /// Per scale s, the 2s+1 convolution kernels, each d_h x d_h, indexed
    /// by offset k + s.
    pub conv: Vec<Vec<Tensor>>,
    /// Scale-fusion logits, length K; weights are softmax(beta_logits).
    pub beta_logits: Tensor,
    /// Pooling attention vector, d_h.
    pub w: Tensor,
    /// Raw pooling temperature, present only when the temperature is
    /// learnable; the effective temperature is softplus(tau_raw).
    pub tau_raw: Option<f64>,
    /// Output weights, 1 x d_h.
    pub w_o: Tensor,
    /// Output bias.
    pub b_o: f64,
}

impl ModelParams {
    /// Effective alignment width, always positive.
    pub fn sigma(&self) -> f64 {
        softplus(self.sigma_raw)
    }

    /// Effective pooling temperature: learned when `tau_raw` is present,
    /// otherwise the fixed config value.
    pub fn tau(&self, config: &ModelConfig) -> f64 {
        match self.tau_raw {
            Some(raw) => softplus(raw),
            None => config.tau,
        }
    }

    /// Scale-fusion weights on the simplex (softmax of the logits).
    pub fn beta(&self) -> Vec<f64> {
        let mut out = self.beta_logits.data().to_vec();
        let mask = vec![true; out.len()];
        crate::tensor::masked_softmax_row(&mut out, &mask).expect("beta_logits nonempty");
        out
    }

    /// Same shapes as `self`, all entries zero. Gradient carrier.
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            w_e: Tensor::zeros(self.w_e.shape()),
            b_e: Tensor::zeros(self.b_e.shape()),
            sigma_raw: 0.0,
            conv: self
                .conv
                .iter()
                .map(|ks| ks.iter().map(|k| Tensor::zeros(k.shape())).collect())
                .collect(),
            beta_logits: Tensor::zeros(self.beta_logits.shape()),
            w: Tensor::zeros(self.w.shape()),
            tau_raw: self.tau_raw.map(|_| 0.0),
            w_o: Tensor::zeros(self.w_o.shape()),
            b_o: 0.0,
        }
    }

    /// Total number of optimizer-visible coordinates.
    pub fn n_coords(&self) -> usize {
        self.to_flat().len()
    }

    /// Concatenate every learnable coordinate into one vector, in a fixed
    /// order shared with `from_flat`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w_e.data());
        out.extend_from_slice(self.b_e.data());
        out.push(self.sigma_raw);
        for kernels in &self.conv {
            for k in kernels {
                out.extend_from_slice(k.data());
            }
        }
        out.extend_from_slice(self.beta_logits.data());
        out.extend_from_slice(self.w.data());
        if let Some(raw) = self.tau_raw {
            out.push(raw);
        }
        out.extend_from_slice(self.w_o.data());
        out.push(self.b_o);
        out
    }

    /// Rebuild parameters from a flat vector laid out by `to_flat`,
    /// using `self` as the shape template.
    pub fn from_flat(&self, flat: &[f64]) -> ModelParams {
        fn take(dst: &mut Tensor, flat: &[f64], pos: &mut usize) {
            let n = dst.len();
            dst.data_mut().copy_from_slice(&flat[*pos..*pos + n]);
            *pos += n;
        }
        let mut out = self.clone();
        let mut pos = 0;
        take(&mut out.w_e, flat, &mut pos);
        take(&mut out.b_e, flat, &mut pos);
        out.sigma_raw = flat[pos];
        pos += 1;
        for kernels in &mut out.conv {
            for k in kernels {
                take(k, flat, &mut pos);
            }
        }
        take(&mut out.beta_logits, flat, &mut pos);
        take(&mut out.w, flat, &mut pos);
        if out.tau_raw.is_some() {
            out.tau_raw = Some(flat[pos]);
            pos += 1;
        }
        take(&mut out.w_o, flat, &mut pos);
        out.b_o = flat[pos];
        pos += 1;
        assert_eq!(pos, flat.len(), "flat parameter vector has wrong length");
        out
    }

    /// Accumulate `other` into `self`, coordinate-wise.
    pub fn add_assign(&mut self, other: &ModelParams) {
        let mut flat = self.to_flat();
        let of = other.to_flat();
        assert_eq!(flat.len(), of.len());
        for (a, b) in flat.iter_mut().zip(of) {
            *a += b;
        }
        *self = self.from_flat(&flat);
    }
}

/// Gradients use the same container as the parameters they shadow;
/// see [`ModelParams::zeros_like`].
pub type ParamGrads = ModelParams;

/// Every intermediate of one forward pass, kept for the backward pass.
/// Layouts are row-major with the dimensions recorded alongside.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub b: usize,
    pub l: usize,
    pub d_h: usize,
    /// Embedded steps, B x L x d_h (zero at padding).
    pub h: Vec<f64>,
    /// Alignment weights, B x L x L (rows of padded steps are zero).
    pub a: Vec<f64>,
    /// Aligned sequence, B x L x d_h.
    pub h_tilde: Vec<f64>,
    /// Per-scale convolution outputs, each B x L x d_h.
    pub h_scales: Vec<Vec<f64>>,
    /// Fusion weights actually used, length K.
    pub beta: Vec<f64>,
    /// Fused sequence, B x L x d_h.
    pub h_fused: Vec<f64>,
    /// Pooling weights, B x L (zero at padding, each item sums to 1).
    pub gamma: Vec<f64>,
    /// Pre-temperature pooling scores w . h_fused, B x L.
    pub raw_scores: Vec<f64>,
    /// Pooled representation, B x d_h.
    pub z: Vec<f64>,
    /// Predicted risks, length B, each strictly inside (0, 1).
    pub y_hat: Vec<f64>,
}

/// Uniform init bound sqrt(6 / (fan_in + fan_out)).
fn uniform_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn draw_uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data)
}

/// Deterministically initialize parameters for `config`. Weight matrices
/// are uniform with bound sqrt(6/(fan_in+fan_out)); biases and fusion
/// logits start at zero (uniform fusion weights); the alignment width
/// starts at 1.0; a learnable temperature starts at the config value.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let (d, d_h) = (config.d, config.d_h);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let w_e = draw_uniform(&mut rng, &[d_h, d], uniform_bound(d, d_h));
    let conv = config
        .scales
        .iter()
        .map(|&s| {
            let fan_in = (2 * s + 1) * d_h;
            let bound = uniform_bound(fan_in, d_h);
            (0..2 * s + 1)
                .map(|_| draw_uniform(&mut rng, &[d_h, d_h], bound))
                .collect()
        })
        .collect();
    let w = draw_uniform(&mut rng, &[d_h], uniform_bound(d_h, 1));
    let w_o = draw_uniform(&mut rng, &[1, d_h], uniform_bound(d_h, 1));
    Ok(ModelParams {
        w_e,
        b_e: Tensor::zeros(&[d_h]),
        sigma_raw: softplus_inv(1.0),
        conv,
        beta_logits: Tensor::zeros(&[config.scales.len()]),
        w,
        tau_raw: config.tau_learnable.then(|| softplus_inv(config.tau)),
        w_o,
        b_o: 0.0,
    })
}
