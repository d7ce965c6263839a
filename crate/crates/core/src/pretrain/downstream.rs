use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LinearHead;
use crate::rng::{self, Rng};
use crate::tensor::{softmax_cross_entropy, Tape, Tensor, Var};

/// Mean-field Gaussian over a linear softmax head on the representation.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamVariational {
    pub mean_weight: Tensor,
    pub mean_bias: Tensor,
    pub log_var_weight: Tensor,
    pub log_var_bias: Tensor,
}

/// The two terms of the per-datapoint downstream ELBO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DownstreamElbo {
    /// Average log-likelihood under one posterior draw.
    pub log_likelihood: f64,
    /// KL to the prior, averaged over parameters.
    pub kl: f64,
    pub elbo: f64,
}

pub(crate) struct BoundDownstream {
    pub vars: [Var; 4],
}

impl DownstreamVariational {
    /// Zero means and a shared initial log-variance.
    pub fn init(classes: usize, dim: usize, init_log_variance: f64) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(Error::invalid("downstream head needs >= 2 classes and a positive dim"));
        }
        Ok(Self {
            mean_weight: Tensor::zeros(&[classes, dim]),
            mean_bias: Tensor::zeros(&[classes]),
            log_var_weight: Tensor::full(&[classes, dim], init_log_variance),
            log_var_bias: Tensor::full(&[classes], init_log_variance),
        })
    }

    pub fn classes(&self) -> usize {
        self.mean_weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean_weight.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.mean_weight.len() + self.mean_bias.len()
    }

    pub fn mean_head(&self) -> LinearHead {
        LinearHead::new(self.mean_weight.clone(), self.mean_bias.clone()).expect("head shapes")
    }

    pub(crate) fn tensors(&self) -> [&Tensor; 4] {
        [&self.mean_weight, &self.mean_bias, &self.log_var_weight, &self.log_var_bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.mean_weight,
            &mut self.mean_bias,
            &mut self.log_var_weight,
            &mut self.log_var_bias,
        ]
    }

    /// Reparameterised draw `(W, b)` given standard-normal noise.
    pub fn sample_head(&self, rng: &mut Rng) -> LinearHead {
        let draw = |mean: &Tensor, log_var: &Tensor, rng: &mut Rng| {
            let data = mean
                .data()
                .iter()
                .zip(log_var.data())
                .map(|(m, lv)| m + (0.5 * lv).exp() * rng::normal(rng))
                .collect();
            Tensor::new(mean.shape().to_vec(), data).expect("draw shape")
        };
        let w = draw(&self.mean_weight, &self.log_var_weight, rng);
        let b = draw(&self.mean_bias, &self.log_var_bias, rng);
        LinearHead::new(w, b).expect("head shapes")
    }

    /// `KL(q ‖ N(0, s²I))` divided by the number of parameters.
    pub fn kl_mean_per_param(&self, prior_variance: f64) -> f64 {
        let mut total = 0.0;
        for (mean, log_var) in [
            (&self.mean_weight, &self.log_var_weight),
            (&self.mean_bias, &self.log_var_bias),
        ] {
            for (m, lv) in mean.data().iter().zip(log_var.data()) {
                total += 0.5 * ((lv.exp() + m * m) / prior_variance - 1.0 - lv + prior_variance.ln());
            }
        }
        total / self.parameter_count() as f64
    }

    pub(crate) fn bind(&self, tape: &mut Tape) -> BoundDownstream {
        let t = self.tensors();
        BoundDownstream {
            vars: [
                tape.param(t[0].clone()),
                tape.param(t[1].clone()),
                tape.param(t[2].clone()),
                tape.param(t[3].clone()),
            ],
        }
    }
}

impl BoundDownstream {
    /// Returns `(elbo, log_likelihood, kl)` nodes for representations `z`.
    pub(crate) fn elbo_on(
        &self,
        tape: &mut Tape,
        z: Var,
        labels: &[usize],
        prior_variance: f64,
        rng: &mut Rng,
    ) -> Result<(Var, Var, Var)> {
        let [mw, mb, lw, lb] = self.vars;
        let sample = |tape: &mut Tape, mean: Var, log_var: Var, rng: &mut Rng| -> Result<Var> {
            let shape = tape.value(mean).shape().to_vec();
            let n: usize = shape.iter().product();
            let xi = tape.constant(Tensor::new(shape, rng::normals(rng, n))?);
            let half = tape.scale_const(log_var, 0.5)?;
            let sd = tape.exp(half)?;
            let noise = tape.mul(sd, xi)?;
            tape.add(mean, noise)
        };
        let w = sample(tape, mw, lw, rng)?;
        let b = sample(tape, mb, lb, rng)?;
        let logits = tape.matmul_t(z, w)?;
        let logits = tape.add_row(logits, b)?;
        let ce = tape.cross_entropy(logits, labels)?;
        let ll = tape.scale_const(ce, -1.0)?;

        let count = (tape.value(mw).len() + tape.value(mb).len()) as f64;
        let mut kl_sum = None;
        for (mean, log_var) in [(mw, lw), (mb, lb)] {
            let var = tape.exp(log_var)?;
            let sq = tape.square(mean)?;
            let t = tape.add(var, sq)?;
            let t = tape.scale_const(t, 1.0 / prior_variance)?;
            let t = tape.sub(t, log_var)?;
            let s = tape.sum(t)?;
            kl_sum = Some(match kl_sum {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let kl = tape.scale_const(kl_sum.expect("two blocks"), 0.5 / count)?;
        let kl = tape.add_const(kl, 0.5 * (prior_variance.ln() - 1.0))?;
        let elbo = tape.sub(ll, kl)?;
        Ok((elbo, ll, kl))
    }
}

/// One-sample estimate of the downstream ELBO on representations `z`.
pub fn downstream_elbo(
    z: &Tensor,
    labels: &[usize],
    q: &DownstreamVariational,
    prior_variance: f64,
    rng: &mut Rng,
) -> Result<DownstreamElbo> {
    if labels.len() != z.rows() || labels.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "downstream_elbo",
            expected: vec![z.rows()],
            actual: vec![labels.len()],
        });
    }
    if !(prior_variance > 0.0) {
        return Err(Error::invalid("prior variance must be positive"));
    }
    let head = q.sample_head(rng);
    let logits = head.forward(z)?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= softmax_cross_entropy(logits.row(i), y)?;
    }
    let log_likelihood = total / labels.len() as f64;
    let kl = q.kl_mean_per_param(prior_variance);
    Ok(DownstreamElbo {
        log_likelihood,
        kl,
        elbo: log_likelihood - kl,
    })
}
