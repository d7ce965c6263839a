use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{EncoderConfig, LinearHead, ModelParams};
use crate::rng;
use crate::tensor::{backprop, OptimizerState, Tape, Tensor};

fn d_steps() -> usize {
    500
}
fn d_lr() -> f64 {
    1e-3
}
fn d_wd() -> f64 {
    1e-4
}

/// Budget of the supervised MAP baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedConfig {
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    /// Rows per step; full batch when unset.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            steps: d_steps(),
            learning_rate: d_lr(),
            weight_decay: d_wd(),
            batch_size: None,
        }
    }
}

/// Trains encoder and a linear head jointly on cross-entropy.
pub fn train_supervised_map(
    labelled: &Dataset,
    encoder: &EncoderConfig,
    cfg: &SupervisedConfig,
    seed: u64,
) -> Result<(ModelParams, LinearHead)> {
    if labelled.is_empty() {
        return Err(Error::EmptyLabelledSet);
    }
    if cfg.batch_size == Some(0) {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let labels = labelled.labels()?;
    let mut model = ModelParams::init(encoder, seed)?;
    let (k, d) = (labelled.num_classes, encoder.representation_dim);
    let mut r = rng::stream(seed, "supervised-head", 0);
    let scale = (1.0 / d as f64).sqrt();
    let mut head = LinearHead::new(
        Tensor::new(vec![k, d], rng::normals(&mut r, k * d).into_iter().map(|v| v * scale).collect())?,
        Tensor::zeros(&[k]),
    )?;
    let mut opt = OptimizerState::adam(cfg.learning_rate, cfg.weight_decay);

    for step in 0..cfg.steps {
        let rows: Vec<usize> = match cfg.batch_size {
            Some(b) if b < labelled.len() => {
                index::sample(&mut rng::stream(seed, "supervised-batch", step as u64), labelled.len(), b).into_vec()
            }
            _ => (0..labelled.len()).collect(),
        };
        let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let w = tape.param(head.weight.clone());
        let b = tape.param(head.bias.clone());
        let x = tape.constant(labelled.inputs.select_rows(&rows));
        let z = model.encode_on(&mut tape, &bound, x)?;
        let logits = tape.matmul_t(z, w)?;
        let logits = tape.add_row(logits, b)?;
        let loss = tape.cross_entropy(logits, &y)?;
        let grads = backprop(&tape, loss)?;

        let mut vars = bound.vars();
        vars.extend([w, b]);
        let mut params: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
        params.extend([head.weight.clone(), head.bias.clone()]);
        let g: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
        opt.step(&mut params, &g)?;
        head.bias = params.pop().expect("bias");
        head.weight = params.pop().expect("weight");
        for (dst, src) in model.tensors_mut().into_iter().zip(params) {
            *dst = src;
        }
    }
    Ok((model, head))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use crate::evaluate::accuracy;
    use crate::posterior::predict_map;

    fn setup() -> (Dataset, EncoderConfig) {
        let ds = gen_synthetic(&SyntheticSpec {
            per_class: 10,
            ..SyntheticSpec::vector(2, 6)
        })
        .unwrap();
        let enc = EncoderConfig {
            hidden: vec![16],
            representation_dim: 8,
            ..EncoderConfig::new(6)
        };
        (ds, enc)
    }

    #[test]
    fn fits_small_toy() {
        let (ds, enc) = setup();
        let cfg = SupervisedConfig {
            steps: 300,
            learning_rate: 1e-2,
            ..SupervisedConfig::default()
        };
        let (model, head) = train_supervised_map(&ds, &enc, &cfg, 0).unwrap();
        let p = predict_map(&head, &model.encode(&ds.inputs).unwrap()).unwrap();
        assert!(accuracy(&p, ds.labels().unwrap()).unwrap() >= 0.95);
    }

    #[test]
    fn zero_budget_and_determinism() {
        let (ds, enc) = setup();
        let zero = SupervisedConfig {
            steps: 0,
            ..SupervisedConfig::default()
        };
        let (m, _) = train_supervised_map(&ds, &enc, &zero, 4).unwrap();
        assert_eq!(m, ModelParams::init(&enc, 4).unwrap());
        let cfg = SupervisedConfig {
            steps: 5,
            batch_size: Some(7),
            ..SupervisedConfig::default()
        };
        let a = train_supervised_map(&ds, &enc, &cfg, 1).unwrap();
        let b = train_supervised_map(&ds, &enc, &cfg, 1).unwrap();
        assert_eq!(a, b);
    }
}
