//! Reverse-mode gradients for the full model, layer by layer in reverse
//! order. Each rule is the exact adjoint of its forward counterpart in
//! `forward.rs`; the test suite checks every parameter coordinate against
//! central finite differences.

use crate::data::PaddedBatch;
use crate::tensor::{axpy, dot, masked_softmax_row_backward, sigmoid_scalar};

use super::forward::item_len;
use super::{ForwardCache, ModelConfig, ModelParams, ParamGrads};

/// Gradients of every learnable parameter for one batch, given the
/// upstream loss gradient with respect to the predictions. The cache must
/// come from a matching [`super::forward`] call on the same batch.
pub fn backward(
    config: &ModelConfig,
    params: &ModelParams,
    batch: &PaddedBatch,
    cache: &ForwardCache,
    dy_hat: &[f64],
) -> ParamGrads {
    let (b, l, d_h) = (cache.b, cache.l, cache.d_h);
    assert_eq!(dy_hat.len(), b);
    let mut grads = params.zeros_like();
    let tau = params.tau(config);
    let inv_tau = 1.0 / tau;
    let mask = &batch.seq_mask;

    // Risk head: y = sigmoid(W_o z + b_o).
    let mut dz = vec![0.0; b * d_h];
    for bi in 0..b {
        let y = cache.y_hat[bi];
        let dlogit = dy_hat[bi] * y * (1.0 - y);
        grads.b_o += dlogit;
        let z_row = &cache.z[bi * d_h..(bi + 1) * d_h];
        axpy(grads.w_o.data_mut(), dlogit, z_row);
        axpy(&mut dz[bi * d_h..(bi + 1) * d_h], dlogit, params.w_o.data());
    }

    // Attention pooling: z = sum_i gamma_i h_i, gamma = softmax(r / tau).
    let mut dh_fused = vec![0.0; b * l * d_h];
    let mut dgamma = vec![0.0; l];
    let mut dscore = vec![0.0; l];
    let all_real = vec![true; l];
    for bi in 0..b {
        let n = item_len(mask, bi, l);
        let dz_row = &dz[bi * d_h..(bi + 1) * d_h];
        for i in 0..n {
            let hf_row = &cache.h_fused[(bi * l + i) * d_h..(bi * l + i + 1) * d_h];
            dgamma[i] = dot(dz_row, hf_row);
            let g = cache.gamma[bi * l + i];
            axpy(
                &mut dh_fused[(bi * l + i) * d_h..(bi * l + i + 1) * d_h],
                g,
                dz_row,
            );
        }
        masked_softmax_row_backward(
            &mut dscore[..n],
            &cache.gamma[bi * l..bi * l + n],
            &dgamma[..n],
            &all_real[..n],
        );
        for i in 0..n {
            let dr = dscore[i] * inv_tau;
            let hf_row = &cache.h_fused[(bi * l + i) * d_h..(bi * l + i + 1) * d_h];
            axpy(grads.w.data_mut(), dr, hf_row);
            axpy(
                &mut dh_fused[(bi * l + i) * d_h..(bi * l + i + 1) * d_h],
                dr,
                params.w.data(),
            );
        }
        if params.tau_raw.is_some() {
            let mut dtau = 0.0;
            for i in 0..n {
                dtau -= dscore[i] * cache.raw_scores[bi * l + i] * inv_tau * inv_tau;
            }
            let raw = params.tau_raw.expect("checked above");
            *grads.tau_raw.as_mut().expect("same layout") += dtau * sigmoid_scalar(raw);
        }
    }

    // Scale fusion: H_fused = sum_s beta_s H_s with beta = softmax(logits).
    let k_scales = cache.h_scales.len();
    let mut dbeta = vec![0.0; k_scales];
    for (s_idx, h_s) in cache.h_scales.iter().enumerate() {
        dbeta[s_idx] = dot(&dh_fused, h_s);
    }
    let all_scales = vec![true; k_scales];
    let mut dlogits = vec![0.0; k_scales];
    masked_softmax_row_backward(&mut dlogits, &cache.beta, &dbeta, &all_scales);
    grads
        .beta_logits
        .data_mut()
        .copy_from_slice(&dlogits);

    // Per-scale convolution, upstream dH_s = beta_s * dH_fused.
    let mut dh_tilde = vec![0.0; b * l * d_h];
    for (s_idx, &s) in config.scales.iter().enumerate() {
        let beta_s = cache.beta[s_idx];
        let kernels = &params.conv[s_idx];
        let kernel_grads = &mut grads.conv[s_idx];
        for bi in 0..b {
            let n = item_len(mask, bi, l);
            for (ki, kernel) in kernels.iter().enumerate() {
                let offset = ki as isize - s as isize;
                let kd = kernel.data();
                let kg = kernel_grads[ki].data_mut();
                for t in 0..n {
                    let tj = t as isize + offset;
                    if tj < 0 || tj >= n as isize {
                        continue;
                    }
                    let tj = tj as usize;
                    let up = &dh_fused[(bi * l + t) * d_h..(bi * l + t + 1) * d_h];
                    let x = &cache.h_tilde[(bi * l + tj) * d_h..(bi * l + tj + 1) * d_h];
                    let dxt = &mut dh_tilde[(bi * l + tj) * d_h..(bi * l + tj + 1) * d_h];
                    for i in 0..d_h {
                        let g = beta_s * up[i];
                        if g != 0.0 {
                            axpy(&mut kg[i * d_h..(i + 1) * d_h], g, x);
                            axpy(dxt, g, &kd[i * d_h..(i + 1) * d_h]);
                        }
                    }
                }
            }
        }
    }

    // Temporal alignment: H_tilde = A H with A = row-softmax of the
    // Gaussian kernel logits -(t_i - t_j)^2 / (2 sigma^2).
    let mut dh = vec![0.0; b * l * d_h];
    if config.align_identity {
        dh.copy_from_slice(&dh_tilde);
    } else {
        let sigma = params.sigma();
        let mut du = 0.0; // gradient w.r.t. u = 1/(2 sigma^2)
        let mut da_row = vec![0.0; l];
        let mut dlogit_row = vec![0.0; l];
        for bi in 0..b {
            let n = item_len(mask, bi, l);
            let t_row = &batch.timestamps[bi * l..bi * l + n];
            for i in 0..n {
                let dht_row = &dh_tilde[(bi * l + i) * d_h..(bi * l + i + 1) * d_h];
                let a_row = &cache.a[(bi * l + i) * l..(bi * l + i) * l + n];
                for j in 0..n {
                    let h_row = &cache.h[(bi * l + j) * d_h..(bi * l + j + 1) * d_h];
                    da_row[j] = dot(dht_row, h_row);
                    axpy(
                        &mut dh[(bi * l + j) * d_h..(bi * l + j + 1) * d_h],
                        a_row[j],
                        dht_row,
                    );
                }
                masked_softmax_row_backward(
                    &mut dlogit_row[..n],
                    a_row,
                    &da_row[..n],
                    &all_real[..n],
                );
                for j in 0..n {
                    let delta = t_row[i] - t_row[j];
                    du -= dlogit_row[j] * delta * delta;
                }
            }
        }
        // u = sigma^-2 / 2, so du/dsigma = -sigma^-3.
        let dsigma = -du / (sigma * sigma * sigma);
        grads.sigma_raw = dsigma * sigmoid_scalar(params.sigma_raw);
    }

    // Embedding: H[b,t] = W_e x + b_e.
    let d = config.d;
    for bi in 0..b {
        let n = item_len(mask, bi, l);
        for t in 0..n {
            let g = &dh[(bi * l + t) * d_h..(bi * l + t + 1) * d_h];
            let x = batch.step_values(bi, t);
            for i in 0..d_h {
                if g[i] != 0.0 {
                    axpy(&mut grads.w_e.data_mut()[i * d..(i + 1) * d], g[i], x);
                }
                grads.b_e.data_mut()[i] += g[i];
            }
        }
    }

    grads
}
