//! Forward pass: each layer as a standalone function over row-major
//! buffers, plus [`forward`] composing them into a [`ForwardCache`].
//!
//! Every loop runs over real (unmasked) steps only, so appending padding
//! to a batch cannot change any item's output.

use crate::data::PaddedBatch;
use crate::tensor::{axpy, dot, masked_softmax_row, sigmoid_scalar, Tensor};

use super::{ForwardCache, ModelConfig, ModelError, ModelParams};

/// Number of real steps of item `bi` (the mask is a prefix of trues).
pub(super) fn item_len(seq_mask: &[bool], bi: usize, l: usize) -> usize {
    let row = &seq_mask[bi * l..(bi + 1) * l];
    let n = row.iter().filter(|&&m| m).count();
    debug_assert!(
        row[..n].iter().all(|&m| m),
        "seq_mask must be a prefix of real steps"
    );
    n
}

/// Linear step embedding: `H[b,t] = W_e x[b,t] + b_e` on real steps,
/// zeros on padding. Output is B x L x d_h.
pub fn embed(batch: &PaddedBatch, w_e: &Tensor, b_e: &Tensor) -> Result<Vec<f64>, ModelError> {
    let d_h = w_e.shape()[0];
    let d = w_e.shape()[1];
    if d != batch.d {
        return Err(ModelError::DimensionMismatch {
            expected: d,
            got: batch.d,
        });
    }
    let (b, l) = (batch.b, batch.l);
    let mut h = vec![0.0; b * l * d_h];
    for bi in 0..b {
        let n = item_len(&batch.seq_mask, bi, l);
        for t in 0..n {
            let x = batch.step_values(bi, t);
            let out = &mut h[(bi * l + t) * d_h..(bi * l + t + 1) * d_h];
            for i in 0..d_h {
                out[i] = dot(&w_e.data()[i * d..(i + 1) * d], x) + b_e.data()[i];
            }
        }
    }
    Ok(h)
}

/// Gaussian-kernel alignment weights, B x L x L. For real steps i, j of
/// one item: `a_ij = exp(-(t_i - t_j)^2 / (2 sigma^2))`, normalized so
/// each row i sums to 1 over real j. Rows of padded steps are zero.
pub fn align_weights(
    timestamps: &[f64],
    seq_mask: &[bool],
    b: usize,
    l: usize,
    sigma: f64,
) -> Result<Vec<f64>, ModelError> {
    assert!(sigma > 0.0, "alignment width must be positive");
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut a = vec![0.0; b * l * l];
    let all_real = vec![true; l];
    for bi in 0..b {
        let n = item_len(seq_mask, bi, l);
        if n == 0 {
            return Err(ModelError::EmptyItem { item: bi });
        }
        let t_row = &timestamps[bi * l..bi * l + n];
        for i in 0..n {
            let row = &mut a[(bi * l + i) * l..(bi * l + i) * l + n];
            for j in 0..n {
                let delta = t_row[i] - t_row[j];
                row[j] = -delta * delta * inv_two_sigma_sq;
            }
            masked_softmax_row(row, &all_real[..n]).expect("row has n >= 1 entries");
        }
    }
    Ok(a)
}

/// Identity alignment for the no-alignment ablation: each real step keeps
/// exactly its own features.
pub fn identity_alignment(seq_mask: &[bool], b: usize, l: usize) -> Vec<f64> {
    let mut a = vec![0.0; b * l * l];
    for bi in 0..b {
        let n = item_len(seq_mask, bi, l);
        for i in 0..n {
            a[(bi * l + i) * l + i] = 1.0;
        }
    }
    a
}

/// Smooth features across time: `H_tilde[b,i] = sum_j A[b,i,j] H[b,j]`
/// over real steps.
pub fn apply_alignment(
    a: &[f64],
    h: &[f64],
    seq_mask: &[bool],
    b: usize,
    l: usize,
    d_h: usize,
) -> Vec<f64> {
    debug_assert_eq!(a.len(), b * l * l);
    debug_assert_eq!(h.len(), b * l * d_h);
    let mut out = vec![0.0; b * l * d_h];
    for bi in 0..b {
        let n = item_len(seq_mask, bi, l);
        for i in 0..n {
            let a_row = &a[(bi * l + i) * l..(bi * l + i) * l + n];
            let out_row = &mut out[(bi * l + i) * d_h..(bi * l + i + 1) * d_h];
            for j in 0..n {
                let h_row = &h[(bi * l + j) * d_h..(bi * l + j + 1) * d_h];
                axpy(out_row, a_row[j], h_row);
            }
        }
    }
    out
}

/// Temporal convolution at one scale: for each real step t,
/// `H_s[b,t] = sum_{k=-s}^{s} W_k h[b,t+k]`, where out-of-range or padded
/// neighbors contribute zero. `kernels[k + s]` holds W_k.
pub fn multiscale_conv(
    h: &[f64],
    s: usize,
    kernels: &[Tensor],
    seq_mask: &[bool],
    b: usize,
    l: usize,
    d_h: usize,
) -> Vec<f64> {
    assert_eq!(kernels.len(), 2 * s + 1, "scale {s} needs {} kernels", 2 * s + 1);
    let mut out = vec![0.0; b * l * d_h];
    for bi in 0..b {
        let n = item_len(seq_mask, bi, l);
        for (ki, kernel) in kernels.iter().enumerate() {
            let offset = ki as isize - s as isize;
            let kd = kernel.data();
            for t in 0..n {
                let tj = t as isize + offset;
                if tj < 0 || tj >= n as isize {
                    continue;
                }
                let x = &h[(bi * l + tj as usize) * d_h..(bi * l + tj as usize + 1) * d_h];
                let y = &mut out[(bi * l + t) * d_h..(bi * l + t + 1) * d_h];
                for i in 0..d_h {
                    y[i] += dot(&kd[i * d_h..(i + 1) * d_h], x);
                }
            }
        }
    }
    out
}

/// Convex combination of per-scale outputs with weights
/// `beta = softmax(beta_logits)`. Returns (fused sequence, beta).
pub fn fuse_scales(h_scales: &[Vec<f64>], beta_logits: &Tensor) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(h_scales.len(), beta_logits.len());
    assert!(!h_scales.is_empty());
    let mut beta = beta_logits.data().to_vec();
    let all = vec![true; beta.len()];
    masked_softmax_row(&mut beta, &all).expect("at least one scale");
    let mut fused = vec![0.0; h_scales[0].len()];
    for (h_s, &b_s) in h_scales.iter().zip(beta.iter()) {
        assert_eq!(h_s.len(), fused.len());
        axpy(&mut fused, b_s, h_s);
    }
    (fused, beta)
}

/// Attention pooling with temperature: per item, scores
/// `w . h[b,i] / tau` over real steps, softmaxed into weights gamma, then
/// `z[b] = sum_i gamma_i h[b,i]`. Returns (z, gamma, raw scores) where the
/// raw scores are the pre-temperature dot products (zero at padding).
pub fn attention_pool(
    h: &[f64],
    w: &Tensor,
    tau: f64,
    seq_mask: &[bool],
    b: usize,
    l: usize,
    d_h: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), ModelError> {
    assert!(tau > 0.0, "pooling temperature must be positive");
    let mut z = vec![0.0; b * d_h];
    let mut gamma = vec![0.0; b * l];
    let mut raw = vec![0.0; b * l];
    let all_real = vec![true; l];
    let inv_tau = 1.0 / tau;
    for bi in 0..b {
        let n = item_len(seq_mask, bi, l);
        if n == 0 {
            return Err(ModelError::EmptyItem { item: bi });
        }
        for i in 0..n {
            let h_row = &h[(bi * l + i) * d_h..(bi * l + i + 1) * d_h];
            let r = dot(w.data(), h_row);
            raw[bi * l + i] = r;
            gamma[bi * l + i] = r * inv_tau;
        }
        let g_row = &mut gamma[bi * l..bi * l + n];
        masked_softmax_row(g_row, &all_real[..n]).expect("n >= 1");
        let z_row = &mut z[bi * d_h..(bi + 1) * d_h];
        for i in 0..n {
            let h_row = &h[(bi * l + i) * d_h..(bi * l + i + 1) * d_h];
            axpy(z_row, gamma[bi * l + i], h_row);
        }
    }
    Ok((z, gamma, raw))
}

/// Risk head: `y_hat[b] = sigmoid(W_o z[b] + b_o)`, strictly in (0, 1).
pub fn predict_risk(z: &[f64], w_o: &Tensor, b_o: f64, b: usize, d_h: usize) -> Vec<f64> {
    debug_assert_eq!(z.len(), b * d_h);
    debug_assert_eq!(w_o.len(), d_h);
    (0..b)
        .map(|bi| sigmoid_scalar(dot(w_o.data(), &z[bi * d_h..(bi + 1) * d_h]) + b_o))
        .collect()
}

/// Full forward pass: embed, align, convolve at every scale, fuse, pool,
/// predict. Returns the predictions and the cache of every intermediate.
pub fn forward(
    config: &ModelConfig,
    params: &ModelParams,
    batch: &PaddedBatch,
) -> Result<(Vec<f64>, ForwardCache), ModelError> {
    let (b, l, d_h) = (batch.b, batch.l, config.d_h);
    let h = embed(batch, &params.w_e, &params.b_e)?;
    let (a, h_tilde) = if config.align_identity {
        (identity_alignment(&batch.seq_mask, b, l), h.clone())
    } else {
        let a = align_weights(&batch.timestamps, &batch.seq_mask, b, l, params.sigma())?;
        let h_tilde = apply_alignment(&a, &h, &batch.seq_mask, b, l, d_h);
        (a, h_tilde)
    };
    let h_scales: Vec<Vec<f64>> = config
        .scales
        .iter()
        .zip(&params.conv)
        .map(|(&s, kernels)| multiscale_conv(&h_tilde, s, kernels, &batch.seq_mask, b, l, d_h))
        .collect();
    let (h_fused, beta) = fuse_scales(&h_scales, &params.beta_logits);
    let (z, gamma, raw_scores) = attention_pool(
        &h_fused,
        &params.w,
        params.tau(config),
        &batch.seq_mask,
        b,
        l,
        d_h,
    )?;
    let y_hat = predict_risk(&z, &params.w_o, params.b_o, b, d_h);
    let cache = ForwardCache {
        b,
        l,
        d_h,
        h,
        a,
        h_tilde,
        h_scales,
        beta,
        h_fused,
        gamma,
        raw_scores,
        z,
        y_hat: y_hat.clone(),
    };
    Ok((y_hat, cache))
}
