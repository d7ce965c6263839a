use serde::Serialize;

use super::{accuracy, auroc, ece, entropy, nll, PredictiveDistribution};
use crate::error::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub nll: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub auroc: Option<f64>,
    pub mean_entropy: f64,
}

impl SeedMetrics {
    /// Metrics of `pred` against `labels`; AUROC uses predictive entropy
    /// with `ood` as the positive class.
    pub fn compute(
        seed: u64,
        pred: &PredictiveDistribution,
        labels: &[usize],
        bins: usize,
        ood: Option<&PredictiveDistribution>,
    ) -> Result<Self> {
        let h = entropy(pred);
        let auroc = ood.map(|o| auroc(&entropy(o), &h)).transpose()?;
        Ok(Self {
            seed,
            nll: nll(pred, labels)?,
            accuracy: accuracy(pred, labels)?,
            ece: ece(pred, labels, bins)?,
            auroc,
            mean_entropy: h.iter().sum::<f64>() / h.len() as f64,
        })
    }
}

/// Metrics averaged over seeds, with the per-seed values kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub nll: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub auroc: Option<f64>,
    pub mean_entropy: f64,
    pub per_seed: Vec<SeedMetrics>,
}

impl MetricsReport {
    pub fn from_seeds(per_seed: Vec<SeedMetrics>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::invalid("metrics report over zero seeds"));
        }
        let n = per_seed.len() as f64;
        let mean = |f: fn(&SeedMetrics) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
        let auroc = if per_seed.iter().all(|s| s.auroc.is_some()) {
            Some(per_seed.iter().map(|s| s.auroc.unwrap()).sum::<f64>() / n)
        } else {
            None
        };
        Ok(Self {
            nll: mean(|s| s.nll),
            accuracy: mean(|s| s.accuracy),
            ece: mean(|s| s.ece),
            auroc,
            mean_entropy: mean(|s| s.mean_entropy),
            per_seed,
        })
    }

    /// `(metric, value)` pairs of the averages.
    pub fn metric_values(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("nll".to_string(), self.nll),
            ("accuracy".to_string(), self.accuracy),
            ("ece".to_string(), self.ece),
            ("mean_entropy".to_string(), self.mean_entropy),
        ];
        if let Some(a) = self.auroc {
            out.push(("auroc".to_string(), a));
        }
        out
    }
}
