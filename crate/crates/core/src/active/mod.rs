//! Simulated pool-based active learning on frozen (or per-round retrained)
//! features.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{split_labels, Dataset};
use crate::error::{Error, Result};
use crate::evaluate::{accuracy, bald, entropy, nll};
use crate::model::{EncoderConfig, ModelParams};
use crate::posterior::{
    fit_laplace, fit_map_head, predict_probit, sample_predictive, train_supervised_map, tune_prior_precision,
    LaplacePosterior, MapBudget, SupervisedConfig, DEFAULT_LAMBDA_GRID,
};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Bald,
    Entropy,
    Random,
}

impl AcquisitionKind {
    pub fn name(self) -> &'static str {
        match self {
            AcquisitionKind::Bald => "bald",
            AcquisitionKind::Entropy => "entropy",
            AcquisitionKind::Random => "random",
        }
    }
}

fn d_draws() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionStrategy {
    pub kind: AcquisitionKind,
    /// Posterior draws used by BALD.
    #[serde(default = "d_draws")]
    pub mc_draws: usize,
}

impl AcquisitionStrategy {
    pub fn new(kind: AcquisitionKind) -> Self {
        Self {
            kind,
            mc_draws: d_draws(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AcquisitionKind::Bald && self.mc_draws < 2 {
            return Err(Error::invalid("BALD needs at least 2 posterior draws"));
        }
        Ok(())
    }
}

/// Metrics after one refit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub seed: u64,
    pub round: usize,
    pub n_labels: usize,
    pub accuracy: f64,
    pub nll: f64,
    pub strategy: AcquisitionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub acquired: Vec<usize>,
    pub accuracy: f64,
    pub nll: f64,
}

/// Labelled and pool indices into the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    /// Rows used to fit the head.
    pub labelled: Vec<usize>,
    /// Labelled rows held out for prior-precision tuning.
    pub validation: Vec<usize>,
    /// Ascending.
    pub pool: Vec<usize>,
    pub history: Vec<Round>,
}

impl PoolState {
    pub fn new(labelled: Vec<usize>, validation: Vec<usize>, mut pool: Vec<usize>) -> Result<Self> {
        pool.sort_unstable();
        let mut seen = std::collections::HashSet::new();
        if !labelled.iter().chain(&validation).chain(&pool).all(|i| seen.insert(*i)) {
            return Err(Error::invalid("labelled, validation and pool sets overlap"));
        }
        Ok(Self {
            labelled,
            validation,
            pool,
            history: Vec::new(),
        })
    }

    pub fn n_labels(&self) -> usize {
        self.labelled.len() + self.validation.len()
    }

    /// Moves `indices` from the pool into the labelled set.
    pub fn take(&mut self, indices: &[usize]) -> Result<()> {
        for &i in indices {
            let pos = self
                .pool
                .binary_search(&i)
                .map_err(|_| Error::invalid(format!("index {i} is not in the pool")))?;
            self.pool.remove(pos);
            self.labelled.push(i);
        }
        Ok(())
    }
}

/// Positions of the `k` largest scores; ties keep the lower position.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Selects `k` of the `pool` rows of `features`.
pub fn acquire(
    post: &LaplacePosterior,
    features: &Tensor,
    pool: &[usize],
    strategy: &AcquisitionStrategy,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    strategy.validate()?;
    if k > pool.len() {
        return Err(Error::invalid(format!("cannot acquire {k} from a pool of {}", pool.len())));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let positions = match strategy.kind {
        AcquisitionKind::Random => {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng::stream(seed, "acquire-random", 0));
            order.truncate(k);
            order
        }
        AcquisitionKind::Entropy => {
            let x = features.select_rows(pool);
            top_k(&entropy(&predict_probit(post, &x)?), k)
        }
        AcquisitionKind::Bald => {
            let x = features.select_rows(pool);
            let pred = sample_predictive(post, &x, strategy.mc_draws, rng::derive_seed(seed, "acquire-bald", 0))?;
            top_k(&bald(pred.draws.as_deref().expect("sampled draws"))?, k)
        }
    };
    Ok(positions.into_iter().map(|p| pool[p]).collect())
}

/// Where per-round features come from.
#[derive(Debug, Clone)]
pub enum EncoderSource {
    /// A fixed encoder; only the head is refit.
    Frozen(ModelParams),
    /// Encoder and head retrained from scratch on the current labels.
    Supervised {
        encoder: EncoderConfig,
        training: SupervisedConfig,
    },
}

fn d_initial() -> usize {
    50
}
fn d_validation() -> usize {
    10
}
fn d_per_round() -> usize {
    10
}
fn d_budget() -> usize {
    150
}
fn d_grid() -> Vec<f64> {
    DEFAULT_LAMBDA_GRID.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveConfig {
    pub strategy: AcquisitionStrategy,
    /// Labels before the first round, validation rows included.
    #[serde(default = "d_initial")]
    pub initial_labels: usize,
    /// Part of the initial labels held out for tuning `λ`.
    #[serde(default = "d_validation")]
    pub validation_size: usize,
    #[serde(default = "d_per_round")]
    pub per_round: usize,
    /// Total labels at the end.
    #[serde(default = "d_budget")]
    pub budget: usize,
    #[serde(default = "d_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub map_budget: MapBudget,
}

impl ActiveConfig {
    pub fn new(kind: AcquisitionKind) -> Self {
        Self {
            strategy: AcquisitionStrategy::new(kind),
            initial_labels: d_initial(),
            validation_size: d_validation(),
            per_round: d_per_round(),
            budget: d_budget(),
            lambda_grid: d_grid(),
            map_budget: MapBudget::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.validation_size == 0 || self.validation_size >= self.initial_labels {
            return Err(Error::invalid("validation_size must be in 1..initial_labels"));
        }
        if self.per_round == 0 {
            return Err(Error::invalid("per_round must be at least 1"));
        }
        if self.budget < self.initial_labels {
            return Err(Error::invalid("budget must be at least initial_labels"));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("lambda_grid must be non-empty and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ActiveRun {
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    pub pool: PoolState,
}

fn fit_round(
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    state: &PoolState,
    cfg: &ActiveConfig,
) -> Result<LaplacePosterior> {
    let pick = |rows: &[usize]| (features.select_rows(rows), rows.iter().map(|&i| labels[i]).collect::<Vec<_>>());
    let (xt, yt) = pick(&state.labelled);
    let (xv, yv) = pick(&state.validation);
    let tuned = tune_prior_precision(&cfg.lambda_grid, &xt, &yt, classes, &xv, &yv, cfg.map_budget)?;
    let all: Vec<usize> = state.labelled.iter().chain(&state.validation).copied().collect();
    let (xa, ya) = pick(&all);
    let head = fit_map_head(&xa, &ya, classes, tuned.lambda, cfg.map_budget)?;
    fit_laplace(&xa, &ya, &head, tuned.lambda)
}

/// Runs one seed: refit, evaluate on `test`, acquire, until `budget` labels.
pub fn run_active_seed(
    train: &Dataset,
    test: &Dataset,
    source: &EncoderSource,
    cfg: &ActiveConfig,
    seed: u64,
) -> Result<ActiveRun> {
    cfg.validate()?;
    let labels = train.labels()?;
    let test_labels = test.labels()?;
    let available = train.len();
    if cfg.budget > available {
        return Err(Error::invalid(format!(
            "budget {} exceeds the {available} training rows",
            cfg.budget
        )));
    }
    let k = train.num_classes;
    let n_fit = cfg.initial_labels - cfg.validation_size;
    let split = split_labels(train, n_fit, cfg.validation_size, n_fit.is_multiple_of(k), rng::derive_seed(seed, "active-split", 0))?;
    let mut state = PoolState::new(split.labelled, split.validation, split.pool)?;

    let frozen = match source {
        EncoderSource::Frozen(model) => Some((model.encode(&train.inputs)?, model.encode(&test.inputs)?)),
        EncoderSource::Supervised { .. } => None,
    };
    let mut curve = Vec::new();
    for round in 0.. {
        let (features, test_features) = match (&frozen, source) {
            (Some(f), _) => (f.0.clone(), f.1.clone()),
            (None, EncoderSource::Supervised { encoder, training }) => {
                let all: Vec<usize> = state.labelled.iter().chain(&state.validation).copied().collect();
                let (model, _) = train_supervised_map(
                    &train.subset(&all)?,
                    encoder,
                    training,
                    rng::derive_seed(seed, "active-supervised", round as u64),
                )?;
                (model.encode(&train.inputs)?, model.encode(&test.inputs)?)
            }
            (None, EncoderSource::Frozen(_)) => unreachable!("frozen features are precomputed"),
        };
        let post = fit_round(&features, labels, k, &state, cfg)?;
        let pred = predict_probit(&post, &test_features)?;
        let point = CurvePoint {
            seed,
            round,
            n_labels: state.n_labels(),
            accuracy: accuracy(&pred, test_labels)?,
            nll: nll(&pred, test_labels)?,
            strategy: cfg.strategy.kind,
        };
        curve.push(point);

        let remaining = cfg.budget - state.n_labels();
        let acquired = if remaining == 0 {
            Vec::new()
        } else {
            let n = remaining.min(cfg.per_round);
            let picked = acquire(
                &post,
                &features,
                &state.pool,
                &cfg.strategy,
                n,
                rng::derive_seed(seed, "active-acquire", round as u64),
            )?;
            state.take(&picked)?;
            picked
        };
        state.history.push(Round {
            acquired: acquired.clone(),
            accuracy: point.accuracy,
            nll: point.nll,
        });
        if acquired.is_empty() {
            break;
        }
    }
    Ok(ActiveRun { seed, curve, pool: state })
}

/// [`run_active_seed`] for every seed.
pub fn run_active_loop(
    train: &Dataset,
    test: &Dataset,
    source: &EncoderSource,
    cfg: &ActiveConfig,
    seeds: &[u64],
) -> Result<Vec<ActiveRun>> {
    seeds.iter().map(|&s| run_active_seed(train, test, source, cfg, s)).collect()
}

/// Mean accuracy over rounds.
pub fn area_under_curve(curve: &[CurvePoint]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().map(|p| p.accuracy).sum::<f64>() / curve.len() as f64
}

/// Writes `seed,round,n_labels,accuracy,nll,strategy` rows.
pub fn write_learning_curve(path: impl AsRef<Path>, points: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "round", "n_labels", "accuracy", "nll", "strategy"])?;
    for p in points {
        w.write_record([
            p.seed.to_string(),
            p.round.to_string(),
            p.n_labels.to_string(),
            format!("{:.16e}", p.accuracy),
            format!("{:.16e}", p.nll),
            p.strategy.name().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
