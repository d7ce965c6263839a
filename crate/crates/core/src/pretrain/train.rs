use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::Serialize;

use crate::data::{build_contrastive_task, Dataset};
use crate::error::{Error, Result};
use crate::model::{EncoderConfig, ModelParams};
use crate::rng;
use crate::tensor::{backprop, OptimizerState, Tensor};

use super::config::PretrainConfig;
use super::downstream::DownstreamVariational;
use super::loss::contrastive_loss;
use super::variational::VariationalState;

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogEntry {
    pub step: usize,
    pub contrastive_loss: f64,
    pub kl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub downstream_elbo: Option<f64>,
    pub tau: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub model: ModelParams,
    pub state: VariationalState,
    /// Present when the downstream ELBO was part of the objective.
    pub downstream: Option<DownstreamVariational>,
    pub log: Vec<LogEntry>,
}

/// Learns encoder and projection weights from `unlabelled`. With a positive
/// `downstream_weight`, `labelled` must be given and its ELBO joins the loss;
/// otherwise it is ignored.
pub fn pretrain(
    unlabelled: &Dataset,
    labelled: Option<&Dataset>,
    encoder: &EncoderConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    if encoder.input_dim != unlabelled.dim() {
        return Err(Error::ShapeMismatch {
            op: "pretrain",
            expected: vec![encoder.input_dim],
            actual: vec![unlabelled.dim()],
        });
    }
    let labelled = if cfg.downstream_weight > 0.0 {
        let l = labelled.ok_or(Error::EmptyLabelledSet)?;
        if l.is_empty() {
            return Err(Error::EmptyLabelledSet);
        }
        l.labels()?;
        Some(l)
    } else {
        None
    };

    let mut model = ModelParams::init(encoder, cfg.seed)?;
    let mut state = VariationalState {
        log_tau: cfg.init_log_tau,
        log_sigma2: cfg.init_log_sigma2,
    };
    let mut downstream = labelled
        .map(|l| DownstreamVariational::init(l.num_classes, encoder.representation_dim, cfg.downstream_init_log_variance))
        .transpose()?;

    let mut encoder_opt = OptimizerState::adam(cfg.learning_rate, cfg.weight_decay);
    let mut variational_opt = OptimizerState::adam(cfg.variational_learning_rate, 0.0);
    let mut downstream_opt = OptimizerState::adam(cfg.learning_rate, 0.0);
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let s = step as u64;
        let task = build_contrastive_task(
            unlabelled,
            cfg.batch_pairs,
            &cfg.augmentation,
            &mut rng::stream(cfg.seed, "pretrain-task", s),
        )?;
        let mut l = contrastive_loss(&task, &model, &state, cfg, &mut rng::stream(cfg.seed, "pretrain-readout", s))?;

        let mut elbo_node = None;
        let mut down_bound = None;
        let mut total = l.loss;
        if let (Some(data), Some(q)) = (labelled, downstream.as_ref()) {
            let mut r = rng::stream(cfg.seed, "pretrain-downstream", s);
            let rows: Vec<usize> = match cfg.downstream_batch {
                Some(b) if b < data.len() => index::sample(&mut r, data.len(), b).into_vec(),
                _ => (0..data.len()).collect(),
            };
            let labels: Vec<usize> = {
                let all = data.labels()?;
                rows.iter().map(|&i| all[i]).collect()
            };
            let tape = &mut l.tape;
            let x = tape.constant(data.inputs.select_rows(&rows));
            let z = model.encode_on(tape, &l.bound, x)?;
            let bound = q.bind(tape);
            let (elbo, _, _) = bound.elbo_on(tape, z, &labels, cfg.downstream_prior_variance, &mut r)?;
            let weighted = tape.scale_const(elbo, -cfg.downstream_weight)?;
            total = tape.add(total, weighted)?;
            elbo_node = Some(elbo);
            down_bound = Some(bound);
        }

        let grads = backprop(&l.tape, total)?;

        let vars = l.bound.vars();
        let mut params: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
        let g: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
        encoder_opt.step(&mut params, &g)?;
        for (dst, src) in model.tensors_mut().into_iter().zip(params) {
            *dst = src;
        }

        let mut vp = [Tensor::scalar(state.log_tau), Tensor::scalar(state.log_sigma2)];
        variational_opt.step(&mut vp, &[grads.get(l.log_tau), grads.get(l.log_sigma2)])?;
        state.log_tau = vp[0].item();
        state.log_sigma2 = vp[1].item();

        if let (Some(q), Some(bound)) = (downstream.as_mut(), down_bound) {
            let mut qp: Vec<Tensor> = q.tensors().into_iter().cloned().collect();
            let qg: Vec<Tensor> = bound.vars.iter().map(|&v| grads.get(v)).collect();
            downstream_opt.step(&mut qp, &qg)?;
            for (dst, src) in q.tensors_mut().into_iter().zip(qp) {
                *dst = src;
            }
        }

        log.push(LogEntry {
            step,
            contrastive_loss: l.tape.value(l.cross_entropy).item(),
            kl: l.tape.value(l.kl).item(),
            downstream_elbo: elbo_node.map(|e| l.tape.value(e).item()),
            tau: state.tau(),
            sigma2: state.sigma2(),
        });
    }

    Ok(PretrainOutput {
        model,
        state,
        downstream,
        log,
    })
}

/// Writes one JSON object per line.
pub fn write_log_jsonl(path: impl AsRef<Path>, log: &[LogEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for entry in log {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
