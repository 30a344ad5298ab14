//! Adam optimizer with bias correction, keyed by parameter name.

use std::collections::BTreeMap;

use super::{Tensor, TensorError};

/// Adam hyperparameters. The 3e-5 learning rate is the fine-tuning default;
/// beta/epsilon follow the usual BERT fine-tuning convention.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// First/second-moment accumulators plus the step counter.
///
/// Accumulators start at zero and materialize lazily with each parameter's
/// shape; `t` increases by exactly one per [`AdamState::update`].
pub struct AdamState {
    hyper: AdamHyper,
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    /// One bias-corrected Adam step over all parameters.
    ///
    /// Every parameter must have a same-shape gradient; a non-finite
    /// gradient aborts the step before any parameter is touched.
    pub fn update(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), TensorError> {
        for (name, param) in params.iter() {
            let grad = grads
                .get(name)
                .ok_or_else(|| TensorError::AdamMissing {
                    name: name.clone(),
                    missing: "gradient",
                })?;
            if grad.shape() != param.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_update",
                    expected: "gradient shaped like its parameter",
                    lhs: param.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            if !grad.all_finite() {
                return Err(TensorError::NonFiniteGradient { name: name.clone() });
            }
        }

        self.t += 1;
        let h = self.hyper;
        let bias1 = 1.0 - h.beta1.powi(self.t as i32);
        let bias2 = 1.0 - h.beta2.powi(self.t as i32);

        for (name, param) in params.iter_mut() {
            let grad = &grads[name];
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
            for ((p, g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = h.beta1 * *mi + (1.0 - h.beta1) * g;
                *vi = h.beta2 * *vi + (1.0 - h.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
            }
        }
        Ok(())
    }
}
