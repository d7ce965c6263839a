//! Inference over the downstream linear head on frozen features.

mod head;
mod laplace;
mod supervised;

pub use head::{fit_map_head, fit_map_theta, predict_map, HeadProblem, MapBudget};
pub use laplace::{
    fit_laplace, fit_laplace_theta, predict_probit, sample_predictive, tune_prior_precision, LaplacePosterior,
    TunedPosterior, DEFAULT_LAMBDA_GRID,
};
pub use supervised::{train_supervised_map, SupervisedConfig};

pub use crate::evaluate::PredictiveDistribution;
