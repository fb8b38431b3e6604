//! Dense f64 tensor primitives with paired forward/backward rules.
//!
//! Everything is row-major, 64-bit, and allocation-explicit. The op set is
//! deliberately small: just what the model graph needs, each op with a
//! backward counterpart that takes upstream gradients. A central-difference
//! checker ([`finite_diff_grad`]) is the independent oracle the analytic
//! rules are verified against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("softmax row {row} has no unmasked entries")]
    AllMaskedRow { row: usize },
    #[error("objective returned a non-finite value at coordinate {coord}")]
    NonFiniteObjective { coord: usize },
}

/// Dense row-major tensor. The invariant `shape.product() == data.len()`
/// holds for every constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {:?} does not match buffer length {}", shape, data.len());
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Element of a rank-2 tensor.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

fn shape_err(context: &'static str, expected: String, got: String) -> KernelError {
    KernelError::ShapeMismatch {
        context,
        expected,
        got,
    }
}

// ---------------------------------------------------------------------------
// Slice-level primitives. The Tensor-level ops below and the model's hot
// loops both route through these, so there is one implementation per rule.
// ---------------------------------------------------------------------------

/// Dot product with four independent accumulators so the loop vectorizes
/// without reassociating a single serial sum.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`, elementwise.
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * *xi;
    }
}

/// `y *= alpha`, elementwise.
#[inline]
pub fn scale_in_place(y: &mut [f64], alpha: f64) {
    for yi in y.iter_mut() {
        *yi *= alpha;
    }
}

/// `c += a * b` for row-major `a` (m x k) and `b` (k x n).
pub fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &apv) in a_row.iter().enumerate() {
            if apv != 0.0 {
                axpy(c_row, apv, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, computed without overflow for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] on (0, inf).
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    // ln(e^y - 1), in the form y + ln(1 - e^-y) to stay finite for large y.
    y + (-(-y).exp()).ln_1p()
}

/// Masked softmax over one row, in place. Logits at masked positions are
/// ignored; their output probability is exactly 0. The row maximum over
/// unmasked entries is subtracted before exponentiation.
pub fn masked_softmax_row(row: &mut [f64], mask: &[bool]) -> Result<(), KernelError> {
    debug_assert_eq!(row.len(), mask.len());
    let mut max = f64::NEG_INFINITY;
    for (v, &m) in row.iter().zip(mask.iter()) {
        if m && *v > max {
            max = *v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(KernelError::AllMaskedRow { row: 0 });
    }
    let mut sum = 0.0;
    for (v, &m) in row.iter_mut().zip(mask.iter()) {
        if m {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    let inv = 1.0 / sum;
    for (v, &m) in row.iter_mut().zip(mask.iter()) {
        if m {
            *v *= inv;
        }
    }
    Ok(())
}

/// Backward of a masked softmax row: given probabilities `p` and upstream
/// `dp`, writes `dlogit` for unmasked entries and exact 0 elsewhere.
pub fn masked_softmax_row_backward(dlogit: &mut [f64], p: &[f64], dp: &[f64], mask: &[bool]) {
    let mut inner = 0.0;
    for i in 0..p.len() {
        if mask[i] {
            inner += p[i] * dp[i];
        }
    }
    for i in 0..p.len() {
        dlogit[i] = if mask[i] { p[i] * (dp[i] - inner) } else { 0.0 };
    }
}

// ---------------------------------------------------------------------------
// Tensor-level ops with backward counterparts.
// ---------------------------------------------------------------------------

/// `A x` for `A` of shape m x n and `x` of length n.
pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor, KernelError> {
    if a.shape().len() != 2 || a.shape()[1] != x.len() {
        return Err(shape_err(
            "matvec",
            format!("[m, {}]", x.len()),
            format!("{:?}", a.shape()),
        ));
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; m];
    for i in 0..m {
        out[i] = dot(&a.data()[i * n..(i + 1) * n], x.data());
    }
    Ok(Tensor::from_vec(&[m], out))
}

/// Gradients of `matvec`: returns (dA, dx).
pub fn matvec_backward(a: &Tensor, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    assert_eq!(dy.len(), m);
    let mut da = Tensor::zeros(&[m, n]);
    let mut dx = Tensor::zeros(&[n]);
    for i in 0..m {
        let g = dy.data()[i];
        axpy(&mut da.data_mut()[i * n..(i + 1) * n], g, x.data());
        axpy(dx.data_mut(), g, &a.data()[i * n..(i + 1) * n]);
    }
    (da, dx)
}

/// `A B` for `A` m x k and `B` k x n.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, KernelError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(shape_err(
            "matmul",
            format!("[m, k] x [k, n] with k = {}", a.shape().last().copied().unwrap_or(0)),
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = Tensor::zeros(&[m, n]);
    matmul_acc(c.data_mut(), a.data(), b.data(), m, k, n);
    Ok(c)
}

/// Gradients of `matmul`: returns (dA, dB).
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> (Tensor, Tensor) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    assert_eq!(dc.shape(), &[m, n]);
    // dA = dC B^T, as per-entry dots against rows of B.
    let mut da = Tensor::zeros(&[m, k]);
    for i in 0..m {
        let dc_row = &dc.data()[i * n..(i + 1) * n];
        let da_row = &mut da.data_mut()[i * k..(i + 1) * k];
        for (p, dav) in da_row.iter_mut().enumerate() {
            *dav = dot(dc_row, &b.data()[p * n..(p + 1) * n]);
        }
    }
    // dB = A^T dC, as scaled row accumulations.
    let mut db = Tensor::zeros(&[k, n]);
    for i in 0..m {
        let dc_row = &dc.data()[i * n..(i + 1) * n];
        for p in 0..k {
            let apv = a.data()[i * k + p];
            if apv != 0.0 {
                axpy(&mut db.data_mut()[p * n..(p + 1) * n], apv, dc_row);
            }
        }
    }
    (da, db)
}

/// Elementwise sum of two tensors of identical shape.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, KernelError> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "add",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_vec(a.shape(), data))
}

/// Gradients of `add`: both operands receive the upstream gradient.
pub fn add_backward(dy: &Tensor) -> (Tensor, Tensor) {
    (dy.clone(), dy.clone())
}

/// `alpha * a`.
pub fn scale(a: &Tensor, alpha: f64) -> Tensor {
    let data = a.data().iter().map(|x| alpha * x).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Gradients of `scale`: returns (da, dalpha).
pub fn scale_backward(a: &Tensor, alpha: f64, dy: &Tensor) -> (Tensor, f64) {
    let da = scale(dy, alpha);
    let dalpha = dot(dy.data(), a.data());
    (da, dalpha)
}

/// Elementwise `e^a`.
pub fn elementwise_exp(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| x.exp()).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Gradient of `elementwise_exp` given the forward output `y`.
pub fn elementwise_exp_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(dy.data()).map(|(yi, gi)| yi * gi).collect();
    Tensor::from_vec(y.shape(), data)
}

/// Row-wise masked softmax of a rank-2 tensor. Masked positions get weight
/// exactly 0; every row must keep at least one unmasked entry.
pub fn softmax_rows(logits: &Tensor, mask: &[bool]) -> Result<Tensor, KernelError> {
    if logits.shape().len() != 2 || mask.len() != logits.len() {
        return Err(shape_err(
            "softmax_rows",
            format!("rank-2 with mask of {} entries", logits.len()),
            format!("{:?} with mask of {}", logits.shape(), mask.len()),
        ));
    }
    let (rows, cols) = (logits.shape()[0], logits.shape()[1]);
    let mut out = logits.clone();
    for r in 0..rows {
        masked_softmax_row(&mut out.data_mut()[r * cols..(r + 1) * cols], &mask[r * cols..(r + 1) * cols])
            .map_err(|_| KernelError::AllMaskedRow { row: r })?;
    }
    Ok(out)
}

/// Backward of `softmax_rows` given the forward output probabilities.
pub fn softmax_rows_backward(probs: &Tensor, mask: &[bool], dprobs: &Tensor) -> Tensor {
    let (rows, cols) = (probs.shape()[0], probs.shape()[1]);
    let mut dlogits = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let span = r * cols..(r + 1) * cols;
        masked_softmax_row_backward(
            &mut dlogits.data_mut()[span.clone()],
            &probs.data()[span.clone()],
            &dprobs.data()[span.clone()],
            &mask[span],
        );
    }
    dlogits
}

/// Elementwise logistic sigmoid.
pub fn sigmoid(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| sigmoid_scalar(*x)).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Gradient of `sigmoid` given the forward output `y`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(yi, gi)| gi * yi * (1.0 - yi))
        .collect();
    Tensor::from_vec(y.shape(), data)
}

/// Central-difference gradient of a scalar function over a flat parameter
/// vector: `(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)` per coordinate.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], eps: f64) -> Result<Vec<f64>, KernelError>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0);
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let fp = f(&work);
        work[i] = orig - eps;
        let fm = f(&work);
        work[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(KernelError::NonFiniteObjective { coord: i });
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}

/// Relative error between an analytic and a numerical gradient entry,
/// floored so finite-difference noise on near-zero coordinates does not
/// dominate.
pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4)
}
