use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{Tape, Tensor, Var};

/// Learned temperature and noise scale of the contrastive readout, both
/// stored in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub log_tau: f64,
    pub log_sigma2: f64,
}

impl Default for VariationalState {
    fn default() -> Self {
        Self {
            log_tau: 0.5f64.ln(),
            log_sigma2: 0.01f64.ln(),
        }
    }
}

impl VariationalState {
    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }
}

/// Projections of the two views of every source, plus their mean `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEmbeddings {
    pub first: Tensor,
    pub second: Tensor,
    pub omega: Tensor,
}

impl PairEmbeddings {
    /// Splits an interleaved `2M × p` batch (rows `2i`, `2i + 1` share a source).
    pub fn from_interleaved(z: &Tensor) -> Result<Self> {
        if z.shape().len() != 2 || !z.rows().is_multiple_of(2) || z.rows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "pair_embeddings",
                expected: vec![2, z.shape().get(1).copied().unwrap_or(0)],
                actual: z.shape().to_vec(),
            });
        }
        let m = z.rows() / 2;
        let first = z.select_rows(&(0..m).map(|i| 2 * i).collect::<Vec<_>>());
        let second = z.select_rows(&(0..m).map(|i| 2 * i + 1).collect::<Vec<_>>());
        let omega = Tensor::new(
            first.shape().to_vec(),
            first.data().iter().zip(second.data()).map(|(a, b)| 0.5 * (a + b)).collect(),
        )?;
        Ok(Self { first, second, omega })
    }

    pub fn subset_size(&self) -> usize {
        self.omega.rows()
    }

    /// Re-interleaves the two views into a `2M × p` batch.
    pub fn interleaved(&self) -> Tensor {
        let (m, p) = (self.first.rows(), self.first.cols());
        let mut data = Vec::with_capacity(2 * m * p);
        for i in 0..m {
            data.extend_from_slice(self.first.row(i));
            data.extend_from_slice(self.second.row(i));
        }
        Tensor::new(vec![2 * m, p], data).expect("interleaved shape")
    }
}

/// One draw `W = ω/τ + σξ` with `ξ ~ N(0, I)`, shape `M × p`.
pub fn sample_wc(pairs: &PairEmbeddings, state: &VariationalState, rng: &mut Rng) -> Tensor {
    let inv_tau = (-state.log_tau).exp();
    let sigma = (0.5 * state.log_sigma2).exp();
    pairs.omega.map(|w| w * inv_tau + sigma * rng::normal(rng))
}

/// `KL(N(μ, σ²I) ‖ N(0, s²I)) / D` for `D = μ.len()` parameters.
pub fn kl_mean_per_param(mu: &[f64], sigma2: f64, prior_variance: f64) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::invalid("KL over zero parameters"));
    }
    if !(sigma2 > 0.0 && prior_variance > 0.0) {
        return Err(Error::invalid("variances must be positive"));
    }
    let d = mu.len() as f64;
    let sq: f64 = mu.iter().map(|m| m * m).sum::<f64>() / d;
    let kl = 0.5 * ((sigma2 + sq) / prior_variance - 1.0 - (sigma2 / prior_variance).ln());
    if !kl.is_finite() {
        return Err(Error::NonFinite("kl_mean_per_param"));
    }
    Ok(kl)
}

/// Tape form of [`kl_mean_per_param`] with `σ² = exp(log_sigma2)` shared by
/// every coordinate of `mu`.
pub fn kl_mean_per_param_on(tape: &mut Tape, mu: Var, log_sigma2: Var, prior_variance: f64) -> Result<Var> {
    let inv = 1.0 / prior_variance;
    let sq = tape.square(mu)?;
    let mean_sq = tape.mean(sq)?;
    let sigma2 = tape.exp(log_sigma2)?;
    let ratio = tape.add(sigma2, mean_sq)?;
    let ratio = tape.scale_const(ratio, inv)?;
    let log_term = tape.scale_const(log_sigma2, -1.0)?;
    let inner = tape.add(ratio, log_term)?;
    let inner = tape.add_const(inner, prior_variance.ln() - 1.0)?;
    tape.scale_const(inner, 0.5)
}
