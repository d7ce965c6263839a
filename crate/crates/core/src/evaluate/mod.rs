//! Predictive metrics and prior-predictive evaluation.

mod metrics;
mod predictive;
mod prior;
mod report;

pub use metrics::{accuracy, auroc, bald, ece, ensemble_average, entropy, entropy_row, nll, PROBABILITY_FLOOR};
pub use predictive::PredictiveDistribution;
pub use prior::{
    build_pair_groups, prior_eval_score, prior_eval_score_from_table, prior_eval_score_with, rho, rho_from_draws,
    rho_table, write_rho_csv, PairGroup, PairGroups, PriorSampler, PriorScore,
};
pub use report::{MetricsReport, SeedMetrics, DEFAULT_ECE_BINS};
