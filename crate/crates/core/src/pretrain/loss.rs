use crate::data::ContrastiveTask;
use crate::error::{Error, Result};
use crate::model::{BoundModel, ModelParams};
use crate::rng::{self, Rng};
use crate::tensor::{Tape, Tensor, Var};

use super::config::{KlTemper, Objective, PretrainConfig, VariationalMean};
use super::variational::{kl_mean_per_param_on, PairEmbeddings, VariationalState};

/// A recorded contrastive objective, ready for [`crate::tensor::backprop`].
#[derive(Debug)]
pub struct ContrastiveLoss {
    pub tape: Tape,
    /// Scalar to minimise: negative likelihood plus tempered KL.
    pub loss: Var,
    /// Mean cross-entropy of the task rows.
    pub cross_entropy: Var,
    pub kl: Var,
    pub bound: BoundModel,
    pub log_tau: Var,
    pub log_sigma2: Var,
    /// Normalised projections, `2M × p`.
    pub projections: Var,
}

impl ContrastiveLoss {
    pub fn value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }
}

/// Records the contrastive objective for `task` on a fresh tape; `rng`
/// supplies the readout noise.
pub fn contrastive_loss(
    task: &ContrastiveTask,
    model: &ModelParams,
    state: &VariationalState,
    cfg: &PretrainConfig,
    rng: &mut Rng,
) -> Result<ContrastiveLoss> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let log_tau = tape.param(Tensor::scalar(state.log_tau));
    let log_sigma2 = tape.param(Tensor::scalar(state.log_sigma2));
    let x = tape.constant(task.inputs.clone());
    let z = model.encode_on(&mut tape, &bound, x)?;
    let projections = model.project_on(&mut tape, &bound, z)?;

    let (cross_entropy, kl) = match cfg.objective {
        Objective::NtXent { temperature } => {
            let ce = nt_xent_on(&mut tape, projections, temperature)?;
            (ce, tape.constant(Tensor::scalar(0.0)))
        }
        Objective::Variational => {
            let omega = tape.pair_mean(projections)?;
            let mean = match cfg.variational_mean {
                VariationalMean::PairMean => {
                    let neg = tape.scale_const(log_tau, -1.0)?;
                    let inv_tau = tape.exp(neg)?;
                    tape.scale(omega, inv_tau)?
                }
                VariationalMean::Zero => {
                    let shape = tape.value(omega).shape().to_vec();
                    tape.constant(Tensor::zeros(&shape))
                }
            };
            let half = tape.scale_const(log_sigma2, 0.5)?;
            let sigma = tape.exp(half)?;
            let shape = tape.value(mean).shape().to_vec();
            let count = tape.value(mean).len();
            let mut total = None;
            for _ in 0..cfg.mc_samples {
                let xi = tape.constant(Tensor::new(shape.clone(), rng::normals(rng, count))?);
                let noise = tape.scale(xi, sigma)?;
                let w = tape.add(mean, noise)?;
                let logits = tape.matmul_t(projections, w)?;
                let ce = tape.cross_entropy(logits, &task.labels)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, ce)?,
                    None => ce,
                });
            }
            let ce = tape.scale_const(total.expect("mc_samples >= 1"), 1.0 / cfg.mc_samples as f64)?;
            let kl = kl_mean_per_param_on(&mut tape, mean, log_sigma2, cfg.prior_variance)?;
            let kl = match cfg.kl_temper {
                KlTemper::MeanPerParameter => kl,
                KlTemper::None => tape.scale_const(kl, count as f64)?,
            };
            (ce, kl)
        }
    };
    let loss = tape.add(cross_entropy, kl)?;
    Ok(ContrastiveLoss {
        tape,
        loss,
        cross_entropy,
        kl,
        bound,
        log_tau,
        log_sigma2,
        projections,
    })
}

/// NT-XENT over an interleaved `2M × p` batch of normalised projections:
/// each row must pick out its partner among the other `2M − 1` rows.
pub fn nt_xent_on(tape: &mut Tape, z: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let n = tape.value(z).rows();
    let sim = tape.matmul_t(z, z)?;
    let logits = tape.scale_const(sim, 1.0 / temperature)?;
    let partners: Vec<usize> = (0..n).map(|i| i ^ 1).collect();
    tape.cross_entropy_masked_diagonal(logits, &partners)
}

pub fn nt_xent_loss(pairs: &PairEmbeddings, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(pairs.interleaved());
    let loss = nt_xent_on(&mut tape, z, temperature)?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_contrastive_task, gen_synthetic, AugmentationSpec, SyntheticSpec};
    use crate::model::EncoderConfig;
    use crate::tensor::backprop;

    #[test]
    fn nt_xent_hand_value() {
        let z = Tensor::matrix(4, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let pairs = PairEmbeddings::from_interleaved(&z).unwrap();
        let e = std::f64::consts::E;
        let want = -(e / (e + 2.0)).ln();
        assert!((nt_xent_loss(&pairs, 1.0).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.5514).abs() < 1e-4);
    }

    fn setup() -> (ContrastiveTask, ModelParams) {
        let ds = gen_synthetic(&SyntheticSpec {
            per_class: 4,
            ..SyntheticSpec::grid(3, 2, 4)
        })
        .unwrap();
        let task = build_contrastive_task(&ds, 4, &AugmentationSpec::small_grid(), &mut rng::stream(0, "task", 0))
            .unwrap();
        let cfg = EncoderConfig {
            hidden: vec![6],
            representation_dim: 5,
            projection_dim: 3,
            ..EncoderConfig::new(8)
        };
        (task, ModelParams::init(&cfg, 1).unwrap())
    }

    #[test]
    fn zero_noise_loss_matches_direct_computation() {
        let (task, model) = setup();
        let state = VariationalState {
            log_tau: 0.3f64.ln(),
            log_sigma2: -200.0,
        };
        let cfg = PretrainConfig::default();
        let l = contrastive_loss(&task, &model, &state, &cfg, &mut rng::stream(0, "n", 0)).unwrap();
        let z = model.project(&model.encode(&task.inputs).unwrap()).unwrap();
        let pairs = PairEmbeddings::from_interleaved(&z).unwrap();
        let w = pairs.omega.map(|v| v / 0.3);
        let logits = z.matmul(&w.transpose()).unwrap();
        let ce: f64 = (0..task.len())
            .map(|i| crate::tensor::softmax_cross_entropy(logits.row(i), task.labels[i]).unwrap())
            .sum::<f64>()
            / task.len() as f64;
        assert!((l.tape.value(l.cross_entropy).item() - ce).abs() < 1e-12);
        let mu: Vec<f64> = w.data().to_vec();
        let kl = super::super::kl_mean_per_param(&mu, (-200f64).exp(), 1.0);
        assert!((l.tape.value(l.kl).item() - kl.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn variants_produce_gradients_where_expected() {
        let (task, model) = setup();
        let state = VariationalState::default();
        for (objective, mean) in [
            (Objective::Variational, VariationalMean::PairMean),
            (Objective::Variational, VariationalMean::Zero),
            (Objective::NtXent { temperature: 0.5 }, VariationalMean::PairMean),
        ] {
            let cfg = PretrainConfig {
                objective,
                variational_mean: mean,
                ..PretrainConfig::default()
            };
            let l = contrastive_loss(&task, &model, &state, &cfg, &mut rng::stream(0, "n", 0)).unwrap();
            let g = backprop(&l.tape, l.loss).unwrap();
            let tau_used = matches!((objective, mean), (Objective::Variational, VariationalMean::PairMean));
            assert_eq!(g.is_reachable(l.log_tau), tau_used, "{objective:?} {mean:?}");
            assert_eq!(g.is_reachable(l.log_sigma2), objective == Objective::Variational);
            assert!(l.bound.vars().iter().all(|&v| g.is_reachable(v)));
        }
    }

    #[test]
    fn untempered_kl_scales_with_parameter_count() {
        let (task, model) = setup();
        let state = VariationalState::default();
        let tempered = PretrainConfig::default();
        let raw = PretrainConfig {
            kl_temper: KlTemper::None,
            ..PretrainConfig::default()
        };
        let a = contrastive_loss(&task, &model, &state, &tempered, &mut rng::stream(0, "n", 0)).unwrap();
        let b = contrastive_loss(&task, &model, &state, &raw, &mut rng::stream(0, "n", 0)).unwrap();
        let d = (task.subset_size() * 3) as f64;
        assert!((b.tape.value(b.kl).item() - d * a.tape.value(a.kl).item()).abs() < 1e-9);
    }
}
