use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer hyper-parameters plus the running moments of every parameter
/// tensor it updates. Weight decay is decoupled: it shrinks parameters
/// directly rather than entering the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            learning_rate,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn sgd(learning_rate: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, weight_decay)
    }

    pub fn adam(learning_rate: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::adam(), learning_rate, weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                op: "optimizer_step",
                expected: vec![params.len()],
                actual: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            p.same_shape(g, "optimizer_step")?;
        }
        if let OptimizerKind::Adam { .. } = self.kind {
            if self.first.is_empty() {
                self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
                self.second = self.first.clone();
            }
            let shapes_match = self.first.len() == params.len()
                && self.first.iter().zip(params.iter()).all(|(m, p)| m.len() == p.len());
            if !shapes_match {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    expected: self.first.iter().map(Vec::len).collect(),
                    actual: params.iter().map(Tensor::len).collect(),
                });
            }
        }

        self.step += 1;
        let lr = self.learning_rate;
        let decay = lr * self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, dx) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * dx + decay * *x;
                    }
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (x, dx)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * dx;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * dx * dx;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        *x -= lr * m_hat / (v_hat.sqrt() + epsilon) + decay * *x;
                    }
                }
            }
        }
        Ok(())
    }
}
