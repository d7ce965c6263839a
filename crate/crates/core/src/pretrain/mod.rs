//! Variational contrastive prior learning.
//!
//! Each step draws a fresh contrastive task, embeds both views of every
//! source through the encoder and projection head, and scores the views
//! against a linear layer `W^c` whose variational mean is built from the
//! data itself: row `i` is the mean embedding of pair `i` divided by a
//! learned temperature `τ`, plus isotropic noise of learned variance `σ²`.

mod config;
mod downstream;
mod loss;
mod train;
mod variational;

pub use config::{KlTemper, Objective, PretrainConfig, VariationalMean};
pub use downstream::{downstream_elbo, DownstreamElbo, DownstreamVariational};
pub use loss::{contrastive_loss, nt_xent_loss, nt_xent_on, ContrastiveLoss};
pub use train::{pretrain, write_log_jsonl, LogEntry, PretrainOutput};
pub use variational::{kl_mean_per_param, kl_mean_per_param_on, sample_wc, PairEmbeddings, VariationalState};
