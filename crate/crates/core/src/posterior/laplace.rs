use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::head::{fit_map_theta, HeadProblem, MapBudget};
use super::PredictiveDistribution;
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::evaluate::nll;
use crate::model::LinearHead;
use crate::rng;
use crate::tensor::{softmax_in_place, Tensor};

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// Gaussian over the flattened head parameters, class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacePosterior {
    pub mean: Vec<f64>,
    /// `K·P × K·P` with `P = d + 1` when biased, `d` otherwise.
    pub covariance: Tensor,
    pub lambda: f64,
    pub dim: usize,
    pub classes: usize,
    pub bias: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PosteriorMeta {
    lambda: f64,
    dim: usize,
    classes: usize,
    bias: bool,
}

impl LaplacePosterior {
    fn width(&self) -> usize {
        self.dim + usize::from(self.bias)
    }

    pub fn map_head(&self) -> Result<LinearHead> {
        if !self.bias {
            return Err(Error::invalid("posterior has no bias; no LinearHead form"));
        }
        LinearHead::unflatten(&self.mean, self.classes, self.dim)
    }

    fn phi(&self, features: &Tensor, i: usize) -> Vec<f64> {
        let mut x = features.row(i).to_vec();
        if self.bias {
            x.push(1.0);
        }
        x
    }

    fn check_features(&self, features: &Tensor) -> Result<()> {
        if features.shape().len() != 2 || features.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "laplace_predict",
                expected: vec![features.shape().first().copied().unwrap_or(0), self.dim],
                actual: features.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn to_container(&self, seed: u64) -> Result<Container> {
        let meta = PosteriorMeta {
            lambda: self.lambda,
            dim: self.dim,
            classes: self.classes,
            bias: self.bias,
        };
        let mut c = Container::new("laplace_posterior", seed, 0, serde_json::to_value(meta)?);
        c.push("mean", Tensor::vector(self.mean.clone()));
        c.push("covariance", self.covariance.clone());
        Ok(c)
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind("laplace_posterior")?;
        let meta: PosteriorMeta = serde_json::from_value(c.metadata.configs.clone())?;
        let mean = c.take("mean")?.into_data();
        let covariance = c.take("covariance")?;
        let p = (meta.dim + usize::from(meta.bias)) * meta.classes;
        if mean.len() != p || covariance.shape() != [p, p] {
            return Err(Error::Metadata(format!("posterior arrays do not match {p} parameters")));
        }
        Ok(Self {
            mean,
            covariance,
            lambda: meta.lambda,
            dim: meta.dim,
            classes: meta.classes,
            bias: meta.bias,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, seed: u64) -> Result<()> {
        self.to_container(seed)?.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

/// Laplace posterior at `theta` with optional bias column.
pub fn fit_laplace_theta(
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    theta: &[f64],
    bias: bool,
    lambda: f64,
) -> Result<LaplacePosterior> {
    let problem = HeadProblem::new(features, labels, classes, lambda, bias)?;
    if theta.len() != problem.parameter_count() {
        return Err(Error::ShapeMismatch {
            op: "fit_laplace",
            expected: vec![problem.parameter_count()],
            actual: vec![theta.len()],
        });
    }
    let h = problem.ggn(theta);
    let p = h.nrows();
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("GGN at prior precision {lambda}")))?;
    let cov = chol.inverse();
    let mut data = Vec::with_capacity(p * p);
    for r in 0..p {
        for c in 0..p {
            data.push(0.5 * (cov[(r, c)] + cov[(c, r)]));
        }
    }
    Ok(LaplacePosterior {
        mean: theta.to_vec(),
        covariance: Tensor::new(vec![p, p], data)?,
        lambda,
        dim: features.cols(),
        classes,
        bias,
    })
}

/// Laplace posterior around a MAP head (bias included).
pub fn fit_laplace(features: &Tensor, labels: &[usize], head: &LinearHead, lambda: f64) -> Result<LaplacePosterior> {
    fit_laplace_theta(features, labels, head.classes(), &head.flatten(), true, lambda)
}

/// Extended probit: `softmax(μ_k / √(1 + π/8 · v_k))` with `v_k` the
/// class-block marginal variance of logit `k`.
pub fn predict_probit(post: &LaplacePosterior, features: &Tensor) -> Result<PredictiveDistribution> {
    post.check_features(features)?;
    let (k, w) = (post.classes, post.width());
    let p = k * w;
    let cov = post.covariance.data();
    let mut out = Vec::with_capacity(features.rows() * k);
    for i in 0..features.rows() {
        let x = post.phi(features, i);
        let mut row: Vec<f64> = (0..k)
            .map(|c| {
                let mu: f64 = post.mean[c * w..(c + 1) * w].iter().zip(&x).map(|(a, b)| a * b).sum();
                let mut v = 0.0;
                for r in 0..w {
                    let base = (c * w + r) * p + c * w;
                    let inner: f64 = cov[base..base + w].iter().zip(&x).map(|(a, b)| a * b).sum();
                    v += x[r] * inner;
                }
                mu / (1.0 + PI / 8.0 * v.max(0.0)).sqrt()
            })
            .collect();
        softmax_in_place(&mut row);
        out.extend(row);
    }
    PredictiveDistribution::new(Tensor::new(vec![features.rows(), k], out)?)
}

/// Lower factor `L` with `LLᵀ = Σ`; falls back to an eigen square root for
/// singular covariances.
fn covariance_root(cov: &Tensor) -> DMatrix<f64> {
    let p = cov.rows();
    let m = DMatrix::from_row_slice(p, p, cov.data());
    if let Some(c) = m.clone().cholesky() {
        return c.l();
    }
    let eig = SymmetricEigen::new(m);
    let mut v = eig.eigenvectors;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    v
}

/// Monte-Carlo predictive from `samples` parameter draws.
pub fn sample_predictive(
    post: &LaplacePosterior,
    features: &Tensor,
    samples: usize,
    seed: u64,
) -> Result<PredictiveDistribution> {
    post.check_features(features)?;
    if samples == 0 {
        return Err(Error::invalid("sample_predictive needs S >= 1"));
    }
    let root = covariance_root(&post.covariance);
    let (k, w) = (post.classes, post.width());
    let p = k * w;
    let phis: Vec<Vec<f64>> = (0..features.rows()).map(|i| post.phi(features, i)).collect();
    let mut draws = Vec::with_capacity(samples);
    for s in 0..samples {
        let mut r = rng::stream(seed, "laplace-draw", s as u64);
        let xi = nalgebra::DVector::from_vec(rng::normals(&mut r, p));
        let delta = &root * xi;
        let theta: Vec<f64> = post.mean.iter().zip(delta.iter()).map(|(m, d)| m + d).collect();
        let mut probs = Vec::with_capacity(phis.len() * k);
        for x in &phis {
            let mut row: Vec<f64> = theta
                .chunks(w)
                .map(|wk| wk.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect();
            softmax_in_place(&mut row);
            probs.extend(row);
        }
        draws.push(Tensor::new(vec![phis.len(), k], probs)?);
    }
    PredictiveDistribution::from_draws(draws)
}

/// Result of prior-precision selection.
#[derive(Debug, Clone)]
pub struct TunedPosterior {
    pub lambda: f64,
    pub head: LinearHead,
    pub posterior: LaplacePosterior,
    /// Validation NLL per candidate; `None` where the fit failed.
    pub scores: Vec<Option<f64>>,
}

/// Refits MAP and Laplace for every candidate and keeps the one with the
/// lowest validation NLL under the probit predictive. Ties keep the
/// smaller `λ`, then the earlier candidate.
#[allow(clippy::too_many_arguments)]
pub fn tune_prior_precision(
    candidates: &[f64],
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    val_features: &Tensor,
    val_labels: &[usize],
    budget: MapBudget,
) -> Result<TunedPosterior> {
    if candidates.is_empty() {
        return Err(Error::invalid("no prior-precision candidates"));
    }
    if labels.is_empty() {
        return Err(Error::EmptyLabelledSet);
    }
    let mut best: Option<(f64, usize, LinearHead, LaplacePosterior)> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    for (idx, &lambda) in candidates.iter().enumerate() {
        let fitted = (|| {
            let problem = HeadProblem::new(features, labels, classes, lambda, true)?;
            let theta = fit_map_theta(&problem, budget, None)?;
            let head = LinearHead::unflatten(&theta, classes, features.cols())?;
            let post = fit_laplace(features, labels, &head, lambda)?;
            let score = nll(&predict_probit(&post, val_features)?, val_labels)?;
            Ok::<_, Error>((score, head, post))
        })();
        match fitted {
            Ok((score, head, post)) => {
                scores.push(Some(score));
                let better = match &best {
                    None => true,
                    Some((s, i, _, _)) => score < *s || (score == *s && lambda < candidates[*i]),
                };
                if better {
                    best = Some((score, idx, head, post));
                }
            }
            Err(Error::NotPositiveDefinite(_)) => scores.push(None),
            Err(e) => return Err(e),
        }
    }
    let (_, idx, head, posterior) =
        best.ok_or_else(|| Error::NotPositiveDefinite("every prior-precision candidate".into()))?;
    Ok(TunedPosterior {
        lambda: candidates[idx],
        head,
        posterior,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn hand_two_by_two() {
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let post = fit_laplace_theta(&x, &[0], 2, &[0.0, 0.0], false, 1.0).unwrap();
        let c = post.covariance.data();
        let want = [5.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 5.0 / 6.0];
        for (a, b) in c.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn no_data_gives_prior_covariance() {
        let x = Tensor::zeros(&[0, 2]);
        let post = fit_laplace_theta(&x, &[], 3, &[0.0; 9], true, 4.0).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                let want = if r == c { 0.25 } else { 0.0 };
                assert!((post.covariance.get2(r, c) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn probit_limits_and_hand_value() {
        let mut post = LaplacePosterior {
            mean: vec![1.0, 0.0],
            covariance: Tensor::zeros(&[2, 2]),
            lambda: 1.0,
            dim: 1,
            classes: 2,
            bias: false,
        };
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let p = predict_probit(&post, &x).unwrap();
        let e = std::f64::consts::E;
        assert!((p.row(0)[0] - e / (e + 1.0)).abs() < 1e-15);

        let v = 8.0 / PI;
        post.covariance = Tensor::matrix(2, 2, vec![v, 0.0, 0.0, v]).unwrap();
        let p = predict_probit(&post, &x).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let want = s.exp() / (s.exp() + 1.0);
        assert!((p.row(0)[0] - want).abs() < 1e-12);
        assert!((p.row(0)[0] - 0.6698).abs() < 1e-4);

        post.mean = vec![0.0, 0.0];
        let p = predict_probit(&post, &x).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn single_draw_with_zero_covariance_is_map() {
        let post = LaplacePosterior {
            mean: vec![0.3, -0.2, 1.0, -0.4, 0.1, 0.0],
            covariance: Tensor::zeros(&[6, 6]),
            lambda: 1.0,
            dim: 2,
            classes: 2,
            bias: true,
        };
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, -0.5, 0.3]).unwrap();
        let mc = sample_predictive(&post, &x, 1, 0).unwrap();
        let map = super::super::predict_map(&post.map_head().unwrap(), &x).unwrap();
        for (a, b) in mc.probs.data().iter().zip(map.probs.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tuning_contract() {
        let mut r = rng::stream(0, "tune", 0);
        let x = Tensor::matrix(10, 2, rng::normals(&mut r, 20)).unwrap();
        let y: Vec<usize> = (0..10).map(|_| r.random_range(0..2)).collect();
        let vx = Tensor::matrix(10, 2, rng::normals(&mut r, 20)).unwrap();
        let vy: Vec<usize> = (0..10).map(|_| r.random_range(0..2)).collect();
        let b = MapBudget::default();
        let one = tune_prior_precision(&[3.0], &x, &y, 2, &vx, &vy, b).unwrap();
        assert_eq!(one.lambda, 3.0);
        let two = tune_prior_precision(&[1e-6, 1e2], &x, &y, 2, &vx, &vy, b).unwrap();
        let s: Vec<f64> = two.scores.iter().map(|s| s.unwrap()).collect();
        let chosen = if two.lambda == 1e-6 { s[0] } else { s[1] };
        assert!(chosen <= s[0].min(s[1]));
        let dup = tune_prior_precision(&[1.0, 1.0], &x, &y, 2, &vx, &vy, b).unwrap();
        assert_eq!(dup.scores[0], dup.scores[1]);
        assert!(tune_prior_precision(&[], &x, &y, 2, &vx, &vy, b).is_err());
    }

    #[test]
    fn container_round_trip() {
        let x = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let head = super::super::fit_map_head(&x, &[0, 1, 1], 2, 1.0, MapBudget::default()).unwrap();
        let post = fit_laplace(&x, &[0, 1, 1], &head, 1.0).unwrap();
        let back = LaplacePosterior::from_container(Container::decode(&post.to_container(3).unwrap().encode().unwrap()).unwrap()).unwrap();
        assert_eq!(back, post);
        let model_like = Container::new("model", 0, 0, serde_json::Value::Null);
        assert!(LaplacePosterior::from_container(model_like).is_err());
    }
}
