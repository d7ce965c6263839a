use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::{AcquisitionKind, AcquisitionStrategy, ActiveConfig};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::EncoderConfig;
use crate::posterior::{MapBudget, SupervisedConfig, DEFAULT_LAMBDA_GRID};
use crate::pretrain::PretrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Held-out files; without them `test_size` rows are split off.
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
}

fn d_test_size() -> usize {
    500
}
fn d_labels_per_class() -> usize {
    10
}
fn d_validation() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub idx: Option<IdxPaths>,
    #[serde(default = "d_test_size")]
    pub test_size: usize,
    /// Cap on the training rows used as the unlabelled set.
    #[serde(default)]
    pub max_unlabelled: Option<usize>,
    /// Labelled rows per class for inference; zero means none.
    #[serde(default = "d_labels_per_class")]
    pub labels_per_class: usize,
    /// Labelled validation rows for prior-precision tuning.
    #[serde(default = "d_validation")]
    pub validation_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveKind {
    #[default]
    Probit,
    MonteCarlo,
}

fn d_grid() -> Vec<f64> {
    DEFAULT_LAMBDA_GRID.to_vec()
}
fn d_mc() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    #[serde(default = "d_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub map_budget: MapBudget,
    #[serde(default)]
    pub predictive: PredictiveKind,
    /// Draws for the Monte-Carlo predictive.
    #[serde(default = "d_mc")]
    pub mc_samples: usize,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            lambda_grid: d_grid(),
            map_budget: MapBudget::default(),
            predictive: PredictiveKind::default(),
            mc_samples: d_mc(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Nll,
    Accuracy,
    Ece,
    Auroc,
    Entropy,
}

fn d_metrics() -> Vec<MetricName> {
    vec![MetricName::Nll, MetricName::Accuracy, MetricName::Ece, MetricName::Entropy]
}
fn d_bins() -> usize {
    crate::evaluate::DEFAULT_ECE_BINS
}
fn d_prior_samples() -> usize {
    500
}
fn d_prior_draws() -> usize {
    10_000
}
fn d_pairs() -> usize {
    200
}
fn d_head_variance() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "d_metrics")]
    pub metrics: Vec<MetricName>,
    #[serde(default = "d_bins")]
    pub ece_bins: usize,
    /// Head draws `S` inside every `ρ`.
    #[serde(default = "d_prior_samples")]
    pub prior_samples: usize,
    /// Monte-Carlo draws of the prior evaluation score.
    #[serde(default = "d_prior_draws")]
    pub prior_draws: usize,
    #[serde(default = "d_pairs")]
    pub pairs_per_group: usize,
    #[serde(default = "d_head_variance")]
    pub head_variance: f64,
    #[serde(default)]
    pub head_bias: bool,
    /// Out-of-distribution corpus for AUROC.
    #[serde(default)]
    pub ood: Option<SyntheticSpec>,
    /// Also train and report the supervised MAP baseline.
    #[serde(default)]
    pub baseline: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            metrics: d_metrics(),
            ece_bins: d_bins(),
            prior_samples: d_prior_samples(),
            prior_draws: d_prior_draws(),
            pairs_per_group: d_pairs(),
            head_variance: d_head_variance(),
            head_bias: false,
            ood: None,
            baseline: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSourceKind {
    #[default]
    Pretrained,
    Supervised,
}

fn d_strategy() -> AcquisitionKind {
    AcquisitionKind::Bald
}
fn d_draws() -> usize {
    100
}
fn d_initial() -> usize {
    50
}
fn d_active_validation() -> usize {
    10
}
fn d_per_round() -> usize {
    10
}
fn d_budget() -> usize {
    150
}
fn d_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveSection {
    #[serde(default = "d_strategy")]
    pub strategy: AcquisitionKind,
    #[serde(default = "d_draws")]
    pub mc_draws: usize,
    #[serde(default = "d_initial")]
    pub initial_labels: usize,
    #[serde(default = "d_active_validation")]
    pub validation_size: usize,
    #[serde(default = "d_per_round")]
    pub per_round: usize,
    #[serde(default = "d_budget")]
    pub budget: usize,
    #[serde(default)]
    pub encoder_source: EncoderSourceKind,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for ActiveSection {
    fn default() -> Self {
        Self {
            strategy: d_strategy(),
            mc_draws: d_draws(),
            initial_labels: d_initial(),
            validation_size: d_active_validation(),
            per_round: d_per_round(),
            budget: d_budget(),
            encoder_source: EncoderSourceKind::default(),
            seeds: d_seeds(),
        }
    }
}

impl ActiveSection {
    pub fn loop_config(&self, posterior: &PosteriorConfig) -> ActiveConfig {
        ActiveConfig {
            strategy: AcquisitionStrategy {
                kind: self.strategy,
                mc_draws: self.mc_draws,
            },
            initial_labels: self.initial_labels,
            validation_size: self.validation_size,
            per_round: self.per_round,
            budget: self.budget,
            lambda_grid: posterior.lambda_grid.clone(),
            map_budget: posterior.map_budget,
        }
    }
}

fn d_out() -> PathBuf {
    PathBuf::from("out")
}

/// Everything one experiment needs; every stage reads the same file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    /// `seed` here is replaced by the stage seed at run time.
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub posterior: PosteriorConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub active: ActiveSection,
    #[serde(default)]
    pub supervised: SupervisedConfig,
}

fn section<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("{path}: {e}")))
}

impl ExperimentConfig {
    /// Checks every section and the constraints between them.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match d.source {
            DatasetSource::Synthetic => {
                let s = d
                    .synthetic
                    .as_ref()
                    .ok_or_else(|| Error::Config("dataset.synthetic: required when dataset.source = \"synthetic\"".into()))?;
                section("dataset.synthetic", s.validate())?;
            }
            DatasetSource::Idx => {
                let idx = d
                    .idx
                    .as_ref()
                    .ok_or_else(|| Error::Config("dataset.idx: required when dataset.source = \"idx\"".into()))?;
                if idx.test_images.is_some() != idx.test_labels.is_some() {
                    return Err(Error::Config(
                        "dataset.idx: test_images and test_labels must be given together".into(),
                    ));
                }
            }
        }
        if self.encoder.input_dim != 0 {
            section("encoder", self.encoder.validate())?;
        } else {
            section("encoder", EncoderConfig { input_dim: 1, ..self.encoder.clone() }.validate())?;
        }
        section("pretrain", self.pretrain.validate())?;
        if self.pretrain.downstream_weight > 0.0 && d.labels_per_class == 0 {
            return Err(Error::Config(
                "pretrain.downstream_weight: a positive weight needs labelled data (dataset.labels_per_class > 0)".into(),
            ));
        }
        if self.pretrain.augmentation.requires_grid() {
            let gridded = match d.source {
                DatasetSource::Synthetic => d.synthetic.as_ref().is_some_and(|s| s.grid.is_some()),
                DatasetSource::Idx => true,
            };
            if !gridded {
                return Err(Error::Config(
                    "pretrain.augmentation: grid transforms need image-like data (dataset.synthetic.grid)".into(),
                ));
            }
        }
        let p = &self.posterior;
        if p.lambda_grid.is_empty() || p.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("posterior.lambda_grid: must be non-empty with positive entries".into()));
        }
        if p.mc_samples == 0 {
            return Err(Error::Config("posterior.mc_samples: must be at least 1".into()));
        }
        let e = &self.evaluation;
        if e.ece_bins == 0 || e.prior_samples == 0 || e.prior_draws == 0 || e.pairs_per_group == 0 {
            return Err(Error::Config(
                "evaluation: ece_bins, prior_samples, prior_draws and pairs_per_group must be at least 1".into(),
            ));
        }
        if !(e.head_variance > 0.0) {
            return Err(Error::Config("evaluation.head_variance: must be positive".into()));
        }
        if e.metrics.contains(&MetricName::Auroc) && e.ood.is_none() {
            return Err(Error::Config("evaluation.metrics: auroc needs an evaluation.ood corpus".into()));
        }
        if let Some(o) = &e.ood {
            section("evaluation.ood", o.validate())?;
        }
        if self.active.seeds.is_empty() {
            return Err(Error::Config("active.seeds: at least one seed".into()));
        }
        section("active", self.active.loop_config(p).validate())?;
        if self.supervised.batch_size == Some(0) {
            return Err(Error::Config("supervised.batch_size: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot render config: {e}")))
    }
}

/// Parses TOML text; errors name the offending key path.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        if msg.starts_with("unknown field") {
            let key = msg.split('`').nth(1).unwrap_or("?");
            let full = if path == "." || path.is_empty() {
                key.to_string()
            } else {
                let parent = path.rsplit_once('.').map_or("", |(p, _)| p);
                if parent.is_empty() {
                    key.to_string()
                } else {
                    format!("{parent}.{key}")
                }
            };
            Error::Config(format!("unknown key `{full}`: {msg}"))
        } else {
            Error::Config(format!("{path}: {msg}"))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}
