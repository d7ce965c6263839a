use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::model::LinearHead;
use crate::tensor::{log_sum_exp, softmax_in_place, Tensor};

/// Iteration cap and gradient-norm tolerance for head fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapBudget {
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for MapBudget {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-8,
        }
    }
}

/// Summed softmax cross-entropy of a linear head plus `(λ/2)‖θ‖²`, with
/// `θ` flattened class-major (`[w_1, b_1, w_2, b_2, …]` when biased).
#[derive(Debug, Clone)]
pub struct HeadProblem {
    /// Rows `[z; 1]` (or `z` without bias), `n × P`.
    phi: Vec<f64>,
    labels: Vec<usize>,
    n: usize,
    width: usize,
    classes: usize,
    lambda: f64,
}

impl HeadProblem {
    pub fn new(features: &Tensor, labels: &[usize], classes: usize, lambda: f64, bias: bool) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "head_problem",
                expected: vec![labels.len()],
                actual: features.shape().to_vec(),
            });
        }
        if classes < 2 {
            return Err(Error::invalid("a head needs at least 2 classes"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("prior precision must be finite and >= 0, got {lambda}")));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let (n, d) = (features.rows(), features.cols());
        let width = d + usize::from(bias);
        let mut phi = Vec::with_capacity(n * width);
        for i in 0..n {
            phi.extend_from_slice(features.row(i));
            if bias {
                phi.push(1.0);
            }
        }
        Ok(Self {
            phi,
            labels: labels.to_vec(),
            n,
            width,
            classes,
            lambda,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.width * self.classes
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.phi[i * self.width..(i + 1) * self.width]
    }

    fn logits(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let x = self.row(i);
        theta
            .chunks(self.width)
            .map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let mut total = 0.5 * self.lambda * theta.iter().map(|t| t * t).sum::<f64>();
        for i in 0..self.n {
            let l = self.logits(theta, i);
            total += log_sum_exp(&l) - l[self.labels[i]];
        }
        total
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = theta.iter().map(|t| self.lambda * t).collect();
        for i in 0..self.n {
            let mut p = self.logits(theta, i);
            softmax_in_place(&mut p);
            p[self.labels[i]] -= 1.0;
            let x = self.row(i);
            for (k, pk) in p.iter().enumerate() {
                for (j, xj) in x.iter().enumerate() {
                    g[k * self.width + j] += pk * xj;
                }
            }
        }
        g
    }

    /// Generalised Gauss-Newton matrix `Σ_n (diag p − p pᵀ) ⊗ φφᵀ + λI`.
    pub fn ggn(&self, theta: &[f64]) -> DMatrix<f64> {
        let (k, w) = (self.classes, self.width);
        let dim = k * w;
        let mut h = DMatrix::<f64>::identity(dim, dim) * self.lambda;
        for i in 0..self.n {
            let mut p = self.logits(theta, i);
            softmax_in_place(&mut p);
            let x = self.row(i);
            for a in 0..k {
                for b in 0..k {
                    let c = if a == b { p[a] - p[a] * p[b] } else { -p[a] * p[b] };
                    if c == 0.0 {
                        continue;
                    }
                    for r in 0..w {
                        let cr = c * x[r];
                        if cr == 0.0 {
                            continue;
                        }
                        for s in 0..w {
                            h[(a * w + r, b * w + s)] += cr * x[s];
                        }
                    }
                }
            }
        }
        h
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton with backtracking from `init` (zeros when `None`).
pub fn fit_map_theta(problem: &HeadProblem, budget: MapBudget, init: Option<&[f64]>) -> Result<Vec<f64>> {
    let dim = problem.parameter_count();
    let mut theta = init.map_or_else(|| vec![0.0; dim], <[f64]>::to_vec);
    if theta.len() != dim {
        return Err(Error::ShapeMismatch {
            op: "fit_map_theta",
            expected: vec![dim],
            actual: vec![theta.len()],
        });
    }
    let mut loss = problem.loss(&theta);
    for _ in 0..budget.max_iters {
        if !loss.is_finite() {
            return Err(Error::NonFinite("map_head_loss"));
        }
        let g = problem.gradient(&theta);
        if norm(&g) < budget.grad_tol {
            break;
        }
        let mut h = problem.ggn(&theta);
        let gv = DVector::from_column_slice(&g);
        let mut jitter = 0.0;
        let step = loop {
            if let Some(chol) = h.clone().cholesky() {
                break chol.solve(&gv);
            }
            let add = if jitter == 0.0 { 1e-10 } else { jitter * 9.0 };
            jitter += add;
            for i in 0..dim {
                h[(i, i)] += add;
            }
            if jitter > 1e6 {
                break gv.clone();
            }
        };
        let slope: f64 = -step.dot(&gv);
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-12 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let cl = problem.loss(&cand);
            if cl.is_finite() && cl <= loss + 1e-4 * t * slope {
                theta = cand;
                loss = cl;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("map_head_loss"));
    }
    Ok(theta)
}

/// MAP linear head with bias on `features`.
pub fn fit_map_head(
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    lambda: f64,
    budget: MapBudget,
) -> Result<LinearHead> {
    if labels.is_empty() {
        return Err(Error::EmptyLabelledSet);
    }
    let problem = HeadProblem::new(features, labels, classes, lambda, true)?;
    let theta = fit_map_theta(&problem, budget, None)?;
    LinearHead::unflatten(&theta, classes, features.cols())
}

/// Softmax of the head's logits.
pub fn predict_map(head: &LinearHead, features: &Tensor) -> Result<PredictiveDistribution> {
    let mut logits = head.forward(features)?;
    let k = head.classes();
    for row in logits.data_mut().chunks_mut(k) {
        softmax_in_place(row);
    }
    PredictiveDistribution::new(logits)
}
