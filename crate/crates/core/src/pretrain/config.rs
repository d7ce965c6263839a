use serde::{Deserialize, Serialize};

use crate::data::AugmentationSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlTemper {
    /// KL divided by the number of parameters it covers.
    #[default]
    MeanPerParameter,
    None,
}

/// Mean of the variational distribution over the contrastive readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariationalMean {
    /// Row `i` is the pair-mean embedding `ω_i / τ`.
    #[default]
    PairMean,
    /// Ablation: zero mean, noise only.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Objective {
    #[default]
    Variational,
    /// Deterministic NT-XENT baseline.
    NtXent { temperature: f64 },
}

fn d_steps() -> usize {
    1000
}
fn d_batch_pairs() -> usize {
    128
}
fn d_one() -> f64 {
    1.0
}
fn d_init_log_variance() -> f64 {
    (1e-2f64).ln()
}
fn d_weight_decay() -> f64 {
    1e-6
}
fn d_lr() -> f64 {
    1e-3
}
fn d_var_lr() -> f64 {
    1e-5
}
fn d_mc() -> usize {
    1
}
fn d_log_tau() -> f64 {
    0.5f64.ln()
}
fn d_log_sigma2() -> f64 {
    0.01f64.ln()
}
fn d_augmentation() -> AugmentationSpec {
    AugmentationSpec::small_grid()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    /// Gradient steps `L`; one fresh contrastive task per step.
    #[serde(default = "d_steps")]
    pub steps: usize,
    /// Source examples `M` per task (the task holds `2M` rows).
    #[serde(default = "d_batch_pairs")]
    pub batch_pairs: usize,
    /// Variance of the Gaussian prior over the contrastive readout.
    #[serde(default = "d_one")]
    pub prior_variance: f64,
    #[serde(default)]
    pub kl_temper: KlTemper,
    /// Weight `α` of the downstream ELBO; zero disables it.
    #[serde(default)]
    pub downstream_weight: f64,
    #[serde(default = "d_one")]
    pub downstream_prior_variance: f64,
    #[serde(default = "d_init_log_variance")]
    pub downstream_init_log_variance: f64,
    /// Labelled rows per step for the downstream ELBO; all when unset.
    #[serde(default)]
    pub downstream_batch: Option<usize>,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_var_lr")]
    pub variational_learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_mc")]
    pub mc_samples: usize,
    #[serde(default = "d_log_tau")]
    pub init_log_tau: f64,
    #[serde(default = "d_log_sigma2")]
    pub init_log_sigma2: f64,
    #[serde(default)]
    pub variational_mean: VariationalMean,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "d_augmentation")]
    pub augmentation: AugmentationSpec,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: d_steps(),
            batch_pairs: d_batch_pairs(),
            prior_variance: d_one(),
            kl_temper: KlTemper::default(),
            downstream_weight: 0.0,
            downstream_prior_variance: d_one(),
            downstream_init_log_variance: d_init_log_variance(),
            downstream_batch: None,
            weight_decay: d_weight_decay(),
            learning_rate: d_lr(),
            variational_learning_rate: d_var_lr(),
            seed: 0,
            mc_samples: d_mc(),
            init_log_tau: d_log_tau(),
            init_log_sigma2: d_log_sigma2(),
            variational_mean: VariationalMean::default(),
            objective: Objective::default(),
            augmentation: d_augmentation(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if self.steps < 1 {
            return fail("steps must be at least 1");
        }
        if self.batch_pairs < 2 {
            return fail("batch_pairs (M) must be at least 2");
        }
        if !(self.prior_variance > 0.0 && self.downstream_prior_variance > 0.0) {
            return fail("prior variances must be positive");
        }
        if !(self.downstream_weight >= 0.0) {
            return fail("downstream_weight must be non-negative");
        }
        if self.mc_samples < 1 {
            return fail("mc_samples must be at least 1");
        }
        if self.downstream_batch == Some(0) {
            return fail("downstream_batch must be at least 1");
        }
        if let Objective::NtXent { temperature } = self.objective {
            if !(temperature > 0.0) {
                return fail("NT-XENT temperature must be positive");
            }
        }
        let finite = [
            self.init_log_tau,
            self.init_log_sigma2,
            self.downstream_init_log_variance,
            self.learning_rate,
            self.variational_learning_rate,
            self.weight_decay,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("learning rates, decay and initial log-values must be finite");
        }
        self.augmentation.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PretrainConfig::default().validate().unwrap();
        let c = PretrainConfig::default();
        assert!((c.learning_rate / c.variational_learning_rate - 100.0).abs() < 1e-9);
        assert!((c.init_log_tau.exp() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_values() {
        let bad = [
            PretrainConfig { batch_pairs: 1, ..Default::default() },
            PretrainConfig { steps: 0, ..Default::default() },
            PretrainConfig { prior_variance: 0.0, ..Default::default() },
            PretrainConfig { downstream_weight: -1.0, ..Default::default() },
            PretrainConfig { mc_samples: 0, ..Default::default() },
            PretrainConfig { objective: Objective::NtXent { temperature: 0.0 }, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
