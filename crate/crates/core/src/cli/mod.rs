//! Experiment runner behind the `ssbnn` binary.
//!
//! Every subcommand reads the same TOML config and works inside one output
//! directory: `pretrain` writes `model.ssbnn` and `pretrain_log.jsonl`,
//! `eval-prior` reads the model and writes `rho.csv`, `infer` writes
//! `posterior.ssbnn`, `metrics` writes `metrics.csv`, `active` writes
//! `learning_curve.csv`. All of them append to `results.csv`.

mod config;
mod results;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{
    parse_config, parse_config_str, ActiveSection, DatasetConfig, DatasetSource, EncoderSourceKind, EvaluationConfig,
    ExperimentConfig, IdxPaths, MetricName, PosteriorConfig, PredictiveKind,
};
pub use results::{config_hash, read_results, write_results, ResultRecord, RESULTS_HEADER};

use crate::active::{area_under_curve, run_active_loop, write_learning_curve, EncoderSource};
use crate::data::{gen_synthetic, load_idx, split_labels, Dataset};
use crate::error::{Error, Result};
use crate::evaluate::{
    build_pair_groups, prior_eval_score_from_table, rho_table, write_rho_csv, MetricsReport, PredictiveDistribution,
    PriorSampler, SeedMetrics,
};
use crate::model::{checkpoint_load, checkpoint_save, EncoderConfig, ModelParams};
use crate::posterior::{
    predict_map, predict_probit, sample_predictive, train_supervised_map, tune_prior_precision, LaplacePosterior,
};
use crate::pretrain::{pretrain, write_log_jsonl};
use crate::rng;

pub const MODEL_FILE: &str = "model.ssbnn";
pub const POSTERIOR_FILE: &str = "posterior.ssbnn";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Parser)]
#[command(name = "ssbnn", version, about = "Self-supervised Bayesian neural networks at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Contrastive prior learning; writes the encoder checkpoint.
    Pretrain(CommonArgs),
    /// Prior evaluation score of the checkpoint and of a fresh encoder.
    EvalPrior(CommonArgs),
    /// Laplace posterior over the linear head on the labelled split.
    Infer(CommonArgs),
    /// Active-learning curves.
    Active(CommonArgs),
    /// Test-set metrics of the fitted posterior.
    Metrics(CommonArgs),
}

#[derive(Debug, Args, Clone)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    EvalPrior,
    Infer,
    Active,
    Metrics,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::EvalPrior => "eval-prior",
            Stage::Infer => "infer",
            Stage::Active => "active",
            Stage::Metrics => "metrics",
        }
    }
}

/// One parsed command line.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub stage: Stage,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

/// Process-level inputs that are not on the command line.
#[derive(Debug, Clone, Default)]
pub struct Environment {
    /// From `SSBNN_OUT`.
    pub out_root: Option<PathBuf>,
    /// From `SOURCE_DATE_EPOCH`; the current time when unset.
    pub timestamp: Option<String>,
}

impl Environment {
    pub fn from_process() -> Self {
        Self {
            out_root: std::env::var_os("SSBNN_OUT").map(PathBuf::from),
            timestamp: std::env::var("SOURCE_DATE_EPOCH").ok(),
        }
    }

    fn timestamp(&self) -> String {
        self.timestamp.clone().unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
                .to_string()
        })
    }
}

/// Parses `argv` (program name first), runs the stage and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (stage, args) = match cli.command {
        Command::Pretrain(a) => (Stage::Pretrain, a),
        Command::EvalPrior(a) => (Stage::EvalPrior, a),
        Command::Infer(a) => (Stage::Infer, a),
        Command::Active(a) => (Stage::Active, a),
        Command::Metrics(a) => (Stage::Metrics, a),
    };
    let inv = Invocation {
        stage,
        config: args.config,
        seed: args.seed,
        out: args.out,
        quiet: args.quiet,
    };
    match run(&inv, &Environment::from_process()) {
        Ok(records) => {
            if !inv.quiet {
                for r in &records {
                    println!("{} {} = {}", r.command, r.metric, r.value);
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Seed of one pipeline stage, derived from the global seed and a tag.
pub fn stage_seed(global: u64, tag: &str) -> u64 {
    rng::derive_seed(global, tag, 0)
}

/// Train/test datasets and the labelled split of the training rows.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub labelled: Vec<usize>,
    pub validation: Vec<usize>,
}

impl PreparedData {
    pub fn labelled_set(&self) -> Result<Dataset> {
        self.train.subset(&self.labelled)
    }

    pub fn validation_set(&self) -> Result<Dataset> {
        self.train.subset(&self.validation)
    }
}

fn balanced(n: usize, k: usize) -> bool {
    n.is_multiple_of(k)
}

/// Loads or generates the corpus and splits it deterministically.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let d = &cfg.dataset;
    let split_seed = stage_seed(seed, "data-split");
    let (train, test) = match d.source {
        DatasetSource::Synthetic => {
            let spec = d.synthetic.as_ref().ok_or_else(|| Error::Config("dataset.synthetic missing".into()))?;
            split_test(gen_synthetic(spec)?, d.test_size, split_seed)?
        }
        DatasetSource::Idx => {
            let idx = d.idx.as_ref().ok_or_else(|| Error::Config("dataset.idx missing".into()))?;
            let all = load_idx(&idx.images, &idx.labels)?;
            match (&idx.test_images, &idx.test_labels) {
                (Some(ti), Some(tl)) => {
                    let mut test = load_idx(ti, tl)?;
                    test.num_classes = test.num_classes.max(all.num_classes);
                    (all, test)
                }
                _ => split_test(all, d.test_size, split_seed)?,
            }
        }
    };
    let train = match d.max_unlabelled {
        Some(cap) if cap < train.len() => train.subset(&(0..cap).collect::<Vec<_>>())?,
        _ => train,
    };
    let k = train.num_classes;
    let n_labelled = d.labels_per_class * k;
    let split = split_labels(
        &train,
        n_labelled,
        if n_labelled == 0 { 0 } else { d.validation_size },
        true,
        stage_seed(seed, "label-split"),
    )?;
    Ok(PreparedData {
        train,
        test,
        labelled: split.labelled,
        validation: split.validation,
    })
}

fn split_test(all: Dataset, test_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let k = all.num_classes;
    let s = split_labels(&all, 0, test_size, balanced(test_size, k), seed)?;
    let mut train_rows = s.pool;
    train_rows.sort_unstable();
    let mut test_rows = s.validation;
    test_rows.sort_unstable();
    Ok((all.subset(&train_rows)?, all.subset(&test_rows)?))
}

/// Encoder config with `input_dim` taken from the data when unset.
pub fn resolve_encoder(cfg: &ExperimentConfig, data: &Dataset) -> Result<EncoderConfig> {
    let mut enc = cfg.encoder.clone();
    if enc.input_dim == 0 {
        enc.input_dim = data.dim();
    } else if enc.input_dim != data.dim() {
        return Err(Error::Config(format!(
            "encoder.input_dim: {} does not match the data width {}",
            enc.input_dim,
            data.dim()
        )));
    }
    enc.validate()?;
    Ok(enc)
}

fn load_model(out: &Path) -> Result<ModelParams> {
    let path = out.join(MODEL_FILE);
    if !path.exists() {
        return Err(Error::invalid(format!(
            "{} not found; run `pretrain` with the same output directory first",
            path.display()
        )));
    }
    Ok(checkpoint_load(path)?.params)
}

struct Recorder {
    command: &'static str,
    hash: String,
    seed: u64,
    timestamp: String,
    records: Vec<ResultRecord>,
}

impl Recorder {
    fn push(&mut self, metric: impl Into<String>, value: f64) {
        self.push_seed(metric, value, self.seed);
    }

    fn push_seed(&mut self, metric: impl Into<String>, value: f64, seed: u64) {
        self.records.push(ResultRecord {
            run_id: format!("{}-{}-{}", self.command, &self.hash[..12], self.seed),
            command: self.command.to_string(),
            config_hash: self.hash.clone(),
            metric: metric.into(),
            value,
            seed,
            timestamp: self.timestamp.clone(),
        });
    }
}

/// Runs one stage and returns the records appended to `results.csv`.
pub fn run(inv: &Invocation, env: &Environment) -> Result<Vec<ResultRecord>> {
    let mut cfg = parse_config(&inv.config)?;
    if let Some(s) = inv.seed {
        cfg.seed = s;
    }
    let out = inv
        .out
        .clone()
        .or_else(|| env.out_root.clone())
        .unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let resolved = out.join(format!("config.{}.toml", inv.stage.name()));
    fs::write(&resolved, cfg.to_toml()?).map_err(|e| Error::io(&resolved, e))?;

    let mut rec = Recorder {
        command: inv.stage.name(),
        hash: config_hash(&cfg)?,
        seed: cfg.seed,
        timestamp: env.timestamp(),
        records: Vec::new(),
    };
    let data = prepare_data(&cfg, cfg.seed)?;
    match inv.stage {
        Stage::Pretrain => stage_pretrain(&cfg, &data, &out, &mut rec)?,
        Stage::EvalPrior => stage_eval_prior(&cfg, &data, &out, &mut rec)?,
        Stage::Infer => stage_infer(&cfg, &data, &out, &mut rec)?,
        Stage::Metrics => stage_metrics(&cfg, &data, &out, &mut rec)?,
        Stage::Active => stage_active(&cfg, &data, &out, &mut rec)?,
    }
    write_results(&rec.records, out.join(RESULTS_FILE))?;
    Ok(rec.records)
}

fn stage_pretrain(cfg: &ExperimentConfig, data: &PreparedData, out: &Path, rec: &mut Recorder) -> Result<()> {
    let enc = resolve_encoder(cfg, &data.train)?;
    let mut pcfg = cfg.pretrain.clone();
    pcfg.seed = stage_seed(cfg.seed, "pretrain");
    let labelled = if pcfg.downstream_weight > 0.0 {
        Some(data.labelled_set()?)
    } else {
        None
    };
    let result = pretrain(&data.train.unlabelled(), labelled.as_ref(), &enc, &pcfg)?;
    let configs = serde_json::json!({ "experiment": cfg, "encoder": enc, "variational": result.state });
    checkpoint_save(out.join(MODEL_FILE), &result.model, configs, pcfg.seed, pcfg.steps as u64)?;
    write_log_jsonl(out.join("pretrain_log.jsonl"), &result.log)?;

    let tail = &result.log[result.log.len().saturating_sub(20)..];
    let mean = |f: fn(&crate::pretrain::LogEntry) -> f64| tail.iter().map(f).sum::<f64>() / tail.len() as f64;
    rec.push("contrastive_loss", mean(|e| e.contrastive_loss));
    rec.push("kl", mean(|e| e.kl));
    rec.push("tau", result.state.tau());
    rec.push("sigma2", result.state.sigma2());
    rec.push("steps", pcfg.steps as f64);
    Ok(())
}

fn stage_eval_prior(cfg: &ExperimentConfig, data: &PreparedData, out: &Path, rec: &mut Recorder) -> Result<()> {
    let model = load_model(out)?;
    let enc = resolve_encoder(cfg, &data.train)?;
    let fresh = ModelParams::init(&enc, stage_seed(cfg.seed, "pretrain"))?;
    let e = &cfg.evaluation;
    let seed = stage_seed(cfg.seed, "eval-prior");
    let groups = build_pair_groups(&data.test, &cfg.pretrain.augmentation, e.pairs_per_group, seed)?;
    for (name, params) in [("prior_score", model), ("prior_score_fresh", fresh)] {
        let sampler = PriorSampler {
            model: params,
            classes: data.train.num_classes,
            head_variance: e.head_variance,
            samples: e.prior_samples,
            seed,
            bias: e.head_bias,
        };
        let table = rho_table(&groups, &sampler)?;
        let score = prior_eval_score_from_table(&table, e.prior_draws, seed)?;
        rec.push(name, score.mean);
        rec.push(format!("{name}_se"), score.std_error);
        for (g, values) in groups.groups.iter().zip(&table) {
            let suffix = if name == "prior_score" { "" } else { "_fresh" };
            rec.push(format!("rho_mean_{}{suffix}", g.name), values.iter().sum::<f64>() / values.len() as f64);
        }
        if name == "prior_score" {
            write_rho_csv(out.join("rho.csv"), &groups, &table)?;
        }
    }
    Ok(())
}

fn stage_infer(cfg: &ExperimentConfig, data: &PreparedData, out: &Path, rec: &mut Recorder) -> Result<()> {
    if data.labelled.is_empty() {
        return Err(Error::EmptyLabelledSet);
    }
    if data.validation.is_empty() {
        return Err(Error::Config("dataset.validation_size: tuning needs at least one validation row".into()));
    }
    let model = load_model(out)?;
    let labelled = data.labelled_set()?;
    let validation = data.validation_set()?;
    let p = &cfg.posterior;
    let tuned = tune_prior_precision(
        &p.lambda_grid,
        &model.encode(&labelled.inputs)?,
        labelled.labels()?,
        data.train.num_classes,
        &model.encode(&validation.inputs)?,
        validation.labels()?,
        p.map_budget,
    )?;
    tuned.posterior.save(out.join(POSTERIOR_FILE), cfg.seed)?;
    rec.push("lambda", tuned.lambda);
    let best = tuned.scores.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    rec.push("validation_nll", best);
    rec.push("n_labelled", labelled.len() as f64);
    Ok(())
}

fn predictive(cfg: &ExperimentConfig, post: &LaplacePosterior, x: &crate::Tensor, seed: u64) -> Result<PredictiveDistribution> {
    match cfg.posterior.predictive {
        PredictiveKind::Probit => predict_probit(post, x),
        PredictiveKind::MonteCarlo => sample_predictive(post, x, cfg.posterior.mc_samples, seed),
    }
}

fn push_report(rec: &mut Recorder, prefix: &str, report: &MetricsReport, wanted: &[MetricName]) {
    for (name, value) in report.metric_values() {
        let keep = match name.as_str() {
            "nll" => wanted.contains(&MetricName::Nll),
            "accuracy" => wanted.contains(&MetricName::Accuracy),
            "ece" => wanted.contains(&MetricName::Ece),
            "auroc" => wanted.contains(&MetricName::Auroc),
            _ => wanted.contains(&MetricName::Entropy),
        };
        if keep {
            rec.push(format!("{prefix}{name}"), value);
        }
    }
}

fn stage_metrics(cfg: &ExperimentConfig, data: &PreparedData, out: &Path, rec: &mut Recorder) -> Result<()> {
    let model = load_model(out)?;
    let path = out.join(POSTERIOR_FILE);
    if !path.exists() {
        return Err(Error::invalid(format!("{} not found; run `infer` first", path.display())));
    }
    let post = LaplacePosterior::load(&path)?;
    let e = &cfg.evaluation;
    let seed = stage_seed(cfg.seed, "metrics");
    let pred = predictive(cfg, &post, &model.encode(&data.test.inputs)?, seed)?;
    let ood = match &e.ood {
        Some(spec) => Some(predictive(cfg, &post, &model.encode(&gen_synthetic(spec)?.inputs)?, seed)?),
        None => None,
    };
    let labels = data.test.labels()?;
    let report = MetricsReport::from_seeds(vec![SeedMetrics::compute(cfg.seed, &pred, labels, e.ece_bins, ood.as_ref())?])?;
    push_report(rec, "", &report, &e.metrics);

    if e.baseline {
        let mut all = data.labelled.clone();
        all.extend(&data.validation);
        if all.is_empty() {
            return Err(Error::EmptyLabelledSet);
        }
        let enc = resolve_encoder(cfg, &data.train)?;
        let (m, head) = train_supervised_map(&data.train.subset(&all)?, &enc, &cfg.supervised, stage_seed(cfg.seed, "supervised"))?;
        let bp = predict_map(&head, &m.encode(&data.test.inputs)?)?;
        let bo = match &e.ood {
            Some(spec) => Some(predict_map(&head, &m.encode(&gen_synthetic(spec)?.inputs)?)?),
            None => None,
        };
        let br = MetricsReport::from_seeds(vec![SeedMetrics::compute(cfg.seed, &bp, labels, e.ece_bins, bo.as_ref())?])?;
        push_report(rec, "baseline_", &br, &e.metrics);
    }

    let path = out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["metric", "value"])?;
    for r in &rec.records {
        w.write_record([r.metric.as_str(), &format!("{:.16e}", r.value)])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn stage_active(cfg: &ExperimentConfig, data: &PreparedData, out: &Path, rec: &mut Recorder) -> Result<()> {
    let source = match cfg.active.encoder_source {
        EncoderSourceKind::Pretrained => EncoderSource::Frozen(load_model(out)?),
        EncoderSourceKind::Supervised => EncoderSource::Supervised {
            encoder: resolve_encoder(cfg, &data.train)?,
            training: cfg.supervised,
        },
    };
    let seeds: Vec<u64> = cfg.active.seeds.iter().map(|s| s.wrapping_add(cfg.seed)).collect();
    let runs = run_active_loop(&data.train, &data.test, &source, &cfg.active.loop_config(&cfg.posterior), &seeds)?;
    let points: Vec<_> = runs.iter().flat_map(|r| r.curve.clone()).collect();
    write_learning_curve(out.join("learning_curve.csv"), &points)?;
    for r in &runs {
        rec.push_seed("auc", area_under_curve(&r.curve), r.seed);
        if let Some(last) = r.curve.last() {
            rec.push_seed("final_accuracy", last.accuracy, r.seed);
        }
    }
    Ok(())
}
