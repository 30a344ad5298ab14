//! Pure forward kernels. The autodiff graph records these and replays their
//! local gradients on the backward pass; tests may also call them directly.

use super::{Tensor, TensorError, DROP_THRESHOLD};

fn shape_err(
    op: &'static str,
    expected: &'static str,
    lhs: &Tensor,
    rhs: &Tensor,
) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        expected,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

/// Standard matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(shape_err("matmul", "[m×k] x [k×n]", a, b));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    // i-k-j order keeps the inner loop contiguous over both b and out.
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

/// Transpose of a 2-D tensor.
pub fn transpose(a: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape().len() != 2 {
        return Err(TensorError::InvalidShape {
            op: "transpose",
            shape: a.shape().to_vec(),
            reason: "expected a 2-D tensor".into(),
        });
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::from_vec(vec![n, m], out)
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", "identical shapes", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

/// Add a 1-D bias over the last axis of `x`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let d = x.last_extent();
    if bias.shape() != [d] {
        return Err(shape_err("add_bias", "bias [d] matching last axis", x, bias));
    }
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(d) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::from_vec(x.shape().to_vec(), data)
}

/// Elementwise product of two same-shape tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(shape_err("mul", "identical shapes", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

pub fn scale(a: &Tensor, k: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * k).collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
}

const GELU_COEFF: f64 = 0.044715;

fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// GELU activation, tanh approximation.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (sqrt_2_over_pi() * (x + GELU_COEFF * x * x * x)).tanh())
}

/// Derivative of [`gelu_scalar`].
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let c = sqrt_2_over_pi();
    let u = c * (x + GELU_COEFF * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * GELU_COEFF * x * x)
}

pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
}

/// Softmax over the last axis with a binary additive mask.
///
/// Mask entries are 0 (keep) or the drop sentinel; a kept row position takes
/// part in the exp-normalization, a dropped one is exactly zero. Rows whose
/// entries are all dropped come out as all zeros. The mask must either match
/// the score shape or be a 1-D vector over the last axis.
pub fn masked_softmax(scores: &Tensor, mask: &Tensor) -> Result<Tensor, TensorError> {
    let n = scores.last_extent();
    let mask_is_row = mask.shape().len() == 1 && mask.shape()[0] == n;
    if !mask_is_row && mask.shape() != scores.shape() {
        return Err(shape_err(
            "masked_softmax",
            "mask matching scores or broadcast over the last axis",
            scores,
            mask,
        ));
    }
    if scores.data().iter().any(|v| v.is_nan()) {
        return Err(TensorError::NanInput {
            op: "masked_softmax",
        });
    }
    if n == 0 {
        return Ok(scores.clone());
    }
    let rows = scores.leading_rows();
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        let srow = &scores.data()[r * n..(r + 1) * n];
        let mrow = if mask_is_row {
            mask.data()
        } else {
            &mask.data()[r * n..(r + 1) * n]
        };
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if mrow[j] > DROP_THRESHOLD && srow[j] > max {
                max = srow[j];
            }
        }
        if max == f64::NEG_INFINITY {
            continue; // fully masked row stays all zeros
        }
        let orow = &mut out[r * n..(r + 1) * n];
        let mut sum = 0.0;
        for j in 0..n {
            if mrow[j] > DROP_THRESHOLD {
                let e = (srow[j] - max).exp();
                orow[j] = e;
                sum += e;
            }
        }
        for v in orow.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::from_vec(scores.shape().to_vec(), out)
}

/// Per-row layer normalization caches reused by the backward pass.
pub(crate) struct LayerNormParts {
    pub output: Tensor,
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_parts(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<LayerNormParts, TensorError> {
    let d = x.last_extent();
    if d == 0 {
        return Err(TensorError::InvalidShape {
            op: "layer_norm",
            shape: x.shape().to_vec(),
            reason: "last axis must be non-empty".into(),
        });
    }
    if gamma.shape() != [d] {
        return Err(shape_err("layer_norm", "gamma [d]", x, gamma));
    }
    if beta.shape() != [d] {
        return Err(shape_err("layer_norm", "beta [d]", x, beta));
    }
    let rows = x.leading_rows();
    let mut out = vec![0.0; rows * d];
    let mut normalized = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let xh = (row[j] - mean) * is;
            normalized[r * d + j] = xh;
            out[r * d + j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    Ok(LayerNormParts {
        output: Tensor::from_vec(x.shape().to_vec(), out)?,
        normalized,
        inv_std,
    })
}

/// Per-row zero-mean unit-variance normalization followed by a gamma/beta affine.
pub fn layer_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<Tensor, TensorError> {
    Ok(layer_norm_parts(x, gamma, beta, eps)?.output)
}

/// Columns `[start, start+len)` of a 2-D tensor.
pub fn slice_cols(x: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
    if x.shape().len() != 2 || start + len > x.shape()[1] {
        return Err(TensorError::InvalidShape {
            op: "slice_cols",
            shape: x.shape().to_vec(),
            reason: format!("column range {}..{} out of bounds", start, start + len),
        });
    }
    let (m, n) = (x.shape()[0], x.shape()[1]);
    let mut out = Vec::with_capacity(m * len);
    for i in 0..m {
        out.extend_from_slice(&x.data()[i * n + start..i * n + start + len]);
    }
    Tensor::from_vec(vec![m, len], out)
}

/// Concatenate 2-D tensors along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    let m = match parts.first() {
        Some(p) => p.shape()[0],
        None => {
            return Err(TensorError::InvalidShape {
                op: "concat_cols",
                shape: vec![],
                reason: "no parts".into(),
            })
        }
    };
    for p in parts {
        if p.shape().len() != 2 || p.shape()[0] != m {
            return Err(TensorError::InvalidShape {
                op: "concat_cols",
                shape: p.shape().to_vec(),
                reason: format!("expected {m} rows in every part"),
            });
        }
    }
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Vec::with_capacity(m * total);
    for i in 0..m {
        for p in parts {
            let n = p.shape()[1];
            out.extend_from_slice(&p.data()[i * n..(i + 1) * n]);
        }
    }
    Tensor::from_vec(vec![m, total], out)
}

/// Gather rows of an embedding table by id.
pub fn embed(table: &Tensor, ids: &[usize]) -> Result<Tensor, TensorError> {
    if table.shape().len() != 2 {
        return Err(TensorError::InvalidShape {
            op: "embed",
            shape: table.shape().to_vec(),
            reason: "table must be 2-D".into(),
        });
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(TensorError::IndexOutOfRange {
                index: id,
                extent: v,
            });
        }
        out.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    Tensor::from_vec(vec![ids.len(), d], out)
}

/// Log-sum-exp of a slice, stable under large negative sentinels.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of 1-D logits against a single target index.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<f64, TensorError> {
    let n = logits.len();
    if target >= n {
        return Err(TensorError::TargetOutOfRange { target, len: n });
    }
    Ok(log_sum_exp(logits.data()) - logits.data()[target])
}

/// Softmax of 1-D logits (no mask); used by the cross-entropy gradient.
pub fn softmax_1d(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
