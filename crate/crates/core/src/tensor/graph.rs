//! Tape-style reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only arena of nodes; every op appends one node
//! whose parents already live in the arena, so descending index order is a
//! reverse topological order and the backward pass visits each node once.

use std::collections::BTreeMap;

use super::ops;
use super::{Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum OpRecord {
    Leaf,
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Gelu(Var),
    MaskedSoftmax { scores: Var },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embed { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, target: usize },
    Sum(Var),
}

struct Node {
    value: Tensor,
    name: Option<String>,
    op: OpRecord,
}

/// Gradients of a scalar loss with respect to every named leaf.
///
/// Leaves the loss does not reach get exactly-zero gradients.
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_name.iter()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: OpRecord) -> Var {
        self.nodes.push(Node {
            value,
            name: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Named leaf that participates in gradient collection.
    pub fn leaf(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            name: Some(name.into()),
            op: OpRecord::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Anonymous leaf; no gradient is reported for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, OpRecord::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(v, OpRecord::Add(a, b)))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let v = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(v, OpRecord::AddBias { x, bias }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, OpRecord::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = ops::scale(self.value(a), k);
        self.push(v, OpRecord::Scale(a, k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, OpRecord::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = ops::transpose(self.value(a))?;
        Ok(self.push(v, OpRecord::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let v = self.value(a).reshaped(shape)?;
        Ok(self.push(v, OpRecord::Reshape(a)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let v = ops::slice_cols(self.value(x), start, len)?;
        Ok(self.push(v, OpRecord::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_cols(&tensors)?;
        Ok(self.push(v, OpRecord::ConcatCols(parts.to_vec())))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = ops::gelu(self.value(x));
        self.push(v, OpRecord::Gelu(x))
    }

    /// Softmax over the last axis; the mask is a constant, not a graph input.
    pub fn masked_softmax(&mut self, scores: Var, mask: &Tensor) -> Result<Var, TensorError> {
        let v = ops::masked_softmax(self.value(scores), mask)?;
        Ok(self.push(v, OpRecord::MaskedSoftmax { scores }))
    }

    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let parts = ops::layer_norm_parts(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            parts.output,
            OpRecord::LayerNorm {
                x,
                gamma,
                beta,
                normalized: parts.normalized,
                inv_std: parts.inv_std,
            },
        ))
    }

    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let v = ops::embed(self.value(table), ids)?;
        Ok(self.push(
            v,
            OpRecord::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Scalar cross-entropy of 1-D logits against one target index.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, TensorError> {
        if self.value(logits).shape().len() != 1 {
            return Err(TensorError::InvalidShape {
                op: "cross_entropy",
                shape: self.value(logits).shape().to_vec(),
                reason: "logits must be 1-D".into(),
            });
        }
        let loss = ops::cross_entropy(self.value(logits), target)?;
        Ok(self.push(
            Tensor::scalar(loss),
            OpRecord::CrossEntropy { logits, target },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), OpRecord::Sum(x))
    }

    /// Reverse-mode gradient of a scalar loss with respect to all named leaves.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut adjoints: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[loss.0] = Some(Tensor::filled(self.value(loss).shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = adjoints[idx].take() else {
                continue;
            };
            self.propagate(idx, &grad, &mut adjoints)?;
            adjoints[idx] = Some(grad);
        }

        let mut by_name = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.name {
                let grad = adjoints[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                by_name.insert(name.clone(), grad);
            }
        }
        Ok(Gradients { by_name })
    }

    fn accumulate(&self, adjoints: &mut [Option<Tensor>], target: Var, grad: Tensor) {
        match &mut adjoints[target.0] {
            Some(existing) => {
                for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *e += g;
                }
            }
            slot @ None => *slot = Some(grad),
        }
    }

    fn propagate(
        &self,
        idx: usize,
        grad: &Tensor,
        adjoints: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        let node = &self.nodes[idx];
        match &node.op {
            OpRecord::Leaf => {}
            OpRecord::Add(a, b) => {
                self.accumulate(adjoints, *a, grad.clone());
                self.accumulate(adjoints, *b, grad.clone());
            }
            OpRecord::AddBias { x, bias } => {
                self.accumulate(adjoints, *x, grad.clone());
                let d = self.value(*bias).len();
                let mut db = vec![0.0; d];
                for row in grad.data().chunks(d) {
                    for (acc, g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                self.accumulate(adjoints, *bias, Tensor::from_vec(vec![d], db)?);
            }
            OpRecord::Mul(a, b) => {
                let da = ops::mul(grad, self.value(*b))?;
                let db = ops::mul(grad, self.value(*a))?;
                self.accumulate(adjoints, *a, da);
                self.accumulate(adjoints, *b, db);
            }
            OpRecord::Scale(a, k) => {
                self.accumulate(adjoints, *a, ops::scale(grad, *k));
            }
            OpRecord::MatMul(a, b) => {
                let bt = ops::transpose(self.value(*b))?;
                let at = ops::transpose(self.value(*a))?;
                self.accumulate(adjoints, *a, ops::matmul(grad, &bt)?);
                self.accumulate(adjoints, *b, ops::matmul(&at, grad)?);
            }
            OpRecord::Transpose(a) => {
                self.accumulate(adjoints, *a, ops::transpose(grad)?);
            }
            OpRecord::Reshape(a) => {
                let back = grad.reshaped(self.value(*a).shape().to_vec())?;
                self.accumulate(adjoints, *a, back);
            }
            OpRecord::SliceCols { x, start } => {
                let full = self.value(*x);
                let (m, n) = (full.shape()[0], full.shape()[1]);
                let len = grad.shape()[1];
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..len {
                        dx[i * n + start + j] = grad.data()[i * len + j];
                    }
                }
                self.accumulate(adjoints, *x, Tensor::from_vec(vec![m, n], dx)?);
            }
            OpRecord::ConcatCols(parts) => {
                let m = grad.shape()[0];
                let total = grad.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    let mut dp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        dp.extend_from_slice(&grad.data()[i * total + offset..i * total + offset + w]);
                    }
                    self.accumulate(adjoints, p, Tensor::from_vec(vec![m, w], dp)?);
                    offset += w;
                }
            }
            OpRecord::Gelu(x) => {
                let xin = self.value(*x);
                let data = xin
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| g * ops::gelu_grad_scalar(v))
                    .collect();
                self.accumulate(adjoints, *x, Tensor::from_vec(xin.shape().to_vec(), data)?);
            }
            OpRecord::MaskedSoftmax { scores } => {
                // ds = y * (g - sum_j g_j y_j) per row; dropped entries have
                // y = 0, so they get exactly-zero gradient automatically.
                let y = &node.value;
                let n = y.last_extent();
                let rows = y.leading_rows();
                let mut ds = vec![0.0; y.len()];
                for r in 0..rows {
                    let yrow = &y.data()[r * n..(r + 1) * n];
                    let grow = &grad.data()[r * n..(r + 1) * n];
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        ds[r * n + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(
                    adjoints,
                    *scores,
                    Tensor::from_vec(y.shape().to_vec(), ds)?,
                );
            }
            OpRecord::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let d = self.value(*x).last_extent();
                let rows = self.value(*x).leading_rows();
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = vec![0.0; rows * d];
                for r in 0..rows {
                    let g = &grad.data()[r * d..(r + 1) * d];
                    let xh = &normalized[r * d..(r + 1) * d];
                    let mut mean_gg = 0.0;
                    let mut mean_ggx = 0.0;
                    for j in 0..d {
                        dgamma[j] += g[j] * xh[j];
                        dbeta[j] += g[j];
                        mean_gg += gm[j] * g[j];
                        mean_ggx += gm[j] * g[j] * xh[j];
                    }
                    mean_gg /= d as f64;
                    mean_ggx /= d as f64;
                    for j in 0..d {
                        dx[r * d + j] = inv_std[r] * (gm[j] * g[j] - mean_gg - xh[j] * mean_ggx);
                    }
                }
                self.accumulate(
                    adjoints,
                    *x,
                    Tensor::from_vec(self.value(*x).shape().to_vec(), dx)?,
                );
                self.accumulate(adjoints, *gamma, Tensor::from_vec(vec![d], dgamma)?);
                self.accumulate(adjoints, *beta, Tensor::from_vec(vec![d], dbeta)?);
            }
            OpRecord::Embed { table, ids } => {
                let tbl = self.value(*table);
                let d = tbl.shape()[1];
                let mut dt = vec![0.0; tbl.len()];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += grad.data()[row * d + j];
                    }
                }
                self.accumulate(adjoints, *table, Tensor::from_vec(tbl.shape().to_vec(), dt)?);
            }
            OpRecord::CrossEntropy { logits, target } => {
                let probs = ops::softmax_1d(self.value(*logits).data());
                let scale = grad.data()[0];
                let mut dl: Vec<f64> = probs.into_iter().map(|p| p * scale).collect();
                dl[*target] -= scale;
                self.accumulate(adjoints, *logits, Tensor::from_vec(vec![dl.len()], dl)?);
            }
            OpRecord::Sum(x) => {
                let g = grad.data()[0];
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(adjoints, *x, Tensor::filled(shape, g));
            }
        }
        Ok(())
    }
}
