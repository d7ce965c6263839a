use std::path::Path;

use rand::Rng as _;
use serde::Serialize;

use crate::data::{augment, AugmentationSpec, Dataset};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{self, Rng};
use crate::tensor::{softmax_in_place, Tensor};

/// Draws heads `W ~ N(0, v·I)` (`K × d`, no bias unless enabled) on top of
/// a fixed encoder.
#[derive(Debug, Clone)]
pub struct PriorSampler {
    pub model: ModelParams,
    pub classes: usize,
    pub head_variance: f64,
    pub samples: usize,
    pub seed: u64,
    pub bias: bool,
}

impl PriorSampler {
    pub fn new(model: ModelParams, classes: usize, seed: u64) -> Self {
        Self {
            model,
            classes,
            head_variance: 20.0,
            samples: 1000,
            seed,
            bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 1 {
            return Err(Error::invalid("prior sampler needs at least one draw"));
        }
        if !(self.head_variance > 0.0) || self.classes < 2 {
            return Err(Error::invalid("prior sampler needs a positive variance and >= 2 classes"));
        }
        Ok(())
    }

    /// Per-draw probabilities `S × (n × K)` for the input batch `x`. Draw
    /// `s` uses the same head for every call.
    pub fn predictive_draws(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.validate()?;
        let z = self.model.encode(x)?;
        let (k, d) = (self.classes, z.cols());
        let sd = self.head_variance.sqrt();
        (0..self.samples)
            .map(|s| {
                let mut r = rng::stream(self.seed, "prior-head", s as u64);
                let w = Tensor::new(vec![k, d], rng::normals(&mut r, k * d).into_iter().map(|v| v * sd).collect())?;
                let mut logits = z.matmul(&w.transpose())?;
                if self.bias {
                    let b: Vec<f64> = rng::normals(&mut r, k).into_iter().map(|v| v * sd).collect();
                    for row in logits.data_mut().chunks_mut(k) {
                        row.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    }
                }
                for row in logits.data_mut().chunks_mut(k) {
                    softmax_in_place(row);
                }
                Ok(logits)
            })
            .collect()
    }
}

/// `(1/S) Σ_s Σ_k p_s(k) q_s(k)` over matched draws.
pub fn rho_from_draws(p: &[&[f64]], q: &[&[f64]]) -> Result<f64> {
    if p.is_empty() || p.len() != q.len() {
        return Err(Error::invalid("rho needs the same non-zero number of draws for both inputs"));
    }
    let total: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    Ok(total / p.len() as f64)
}

/// Prior-predictive probability that `x1` and `x2` share a label.
pub fn rho(sampler: &PriorSampler, x1: &[f64], x2: &[f64]) -> Result<f64> {
    let x = Tensor::from_rows(&[x1.to_vec(), x2.to_vec()])?;
    let draws = sampler.predictive_draws(&x)?;
    let p: Vec<&[f64]> = draws.iter().map(|d| d.row(0)).collect();
    let q: Vec<&[f64]> = draws.iter().map(|d| d.row(1)).collect();
    rho_from_draws(&p, &q)
}

/// Input pairs of one similarity level.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGroup {
    pub name: String,
    pub first: Tensor,
    pub second: Tensor,
}

impl PairGroup {
    pub fn len(&self) -> usize {
        self.first.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Groups in decreasing order of semantic similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGroups {
    pub groups: Vec<PairGroup>,
}

/// Augmented, same-class and different-class pairs, `n` of each.
pub fn build_pair_groups(ds: &Dataset, spec: &AugmentationSpec, n: usize, seed: u64) -> Result<PairGroups> {
    let labels = ds.labels()?;
    if ds.num_classes < 2 || n == 0 {
        return Err(Error::invalid("pair groups need >= 2 classes and n >= 1"));
    }
    let mut by_class = vec![Vec::new(); ds.num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(c) = by_class.iter().position(|v| v.len() < 2) {
        return Err(Error::invalid(format!("class {c} has fewer than 2 examples")));
    }
    let present: Vec<usize> = (0..ds.num_classes).filter(|&c| !by_class[c].is_empty()).collect();
    let mut r = rng::stream(seed, "pair-groups", 0);
    let dim = ds.dim();
    let mut bufs = vec![(Vec::with_capacity(n * dim), Vec::with_capacity(n * dim)); 3];
    for _ in 0..n {
        let base = r.random_range(0..ds.len());
        let x = ds.inputs.row(base);
        let y = labels[base];

        bufs[0].0.extend_from_slice(x);
        bufs[0].1.extend(augment(x, ds.grid, spec, &mut r)?);

        let same = &by_class[y];
        let mut other = same[r.random_range(0..same.len())];
        while other == base {
            other = same[r.random_range(0..same.len())];
        }
        bufs[1].0.extend_from_slice(x);
        bufs[1].1.extend_from_slice(ds.inputs.row(other));

        let mut c = present[r.random_range(0..present.len())];
        while c == y {
            c = present[r.random_range(0..present.len())];
        }
        let pick = by_class[c][r.random_range(0..by_class[c].len())];
        bufs[2].0.extend_from_slice(x);
        bufs[2].1.extend_from_slice(ds.inputs.row(pick));
    }
    let names = ["augmented", "same_class", "different_class"];
    let groups = bufs
        .into_iter()
        .zip(names)
        .map(|((a, b), name)| {
            Ok(PairGroup {
                name: name.to_string(),
                first: Tensor::new(vec![n, dim], a)?,
                second: Tensor::new(vec![n, dim], b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairGroups { groups })
}

/// `ρ` for every pair of every group.
pub fn rho_table(groups: &PairGroups, sampler: &PriorSampler) -> Result<Vec<Vec<f64>>> {
    groups
        .groups
        .iter()
        .map(|g| {
            let a = sampler.predictive_draws(&g.first)?;
            let b = sampler.predictive_draws(&g.second)?;
            (0..g.len())
                .map(|i| {
                    let p: Vec<&[f64]> = a.iter().map(|d| d.row(i)).collect();
                    let q: Vec<&[f64]> = b.iter().map(|d| d.row(i)).collect();
                    rho_from_draws(&p, &q)
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorScore {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Fraction of `draws` in which `sample(g, rng)` is strictly decreasing in
/// `g = 0..groups`.
pub fn prior_eval_score_with(
    groups: usize,
    draws: usize,
    seed: u64,
    mut sample: impl FnMut(usize, &mut Rng) -> f64,
) -> Result<PriorScore> {
    if draws == 0 || groups < 2 {
        return Err(Error::invalid("prior evaluation needs >= 1 draw and >= 2 groups"));
    }
    let mut hits = 0usize;
    for d in 0..draws {
        let mut r = rng::stream(seed, "prior-eval-draw", d as u64);
        let values: Vec<f64> = (0..groups).map(|g| sample(g, &mut r)).collect();
        if values.windows(2).all(|w| w[0] > w[1]) {
            hits += 1;
        }
    }
    let mean = hits as f64 / draws as f64;
    Ok(PriorScore {
        mean,
        std_error: (mean * (1.0 - mean) / draws as f64).sqrt(),
        draws,
    })
}

/// Scores a precomputed `ρ` table, drawing one pair per group per draw.
pub fn prior_eval_score_from_table(table: &[Vec<f64>], draws: usize, seed: u64) -> Result<PriorScore> {
    if table.iter().any(Vec::is_empty) {
        return Err(Error::invalid("every pair group must be non-empty"));
    }
    prior_eval_score_with(table.len(), draws, seed, |g, r| table[g][r.random_range(0..table[g].len())])
}

pub fn prior_eval_score(groups: &PairGroups, sampler: &PriorSampler, draws: usize) -> Result<PriorScore> {
    let table = rho_table(groups, sampler)?;
    prior_eval_score_from_table(&table, draws, sampler.seed)
}

/// Writes `group,pair,rho` rows.
pub fn write_rho_csv(path: impl AsRef<Path>, groups: &PairGroups, table: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "pair", "rho"])?;
    for (g, values) in groups.groups.iter().zip(table) {
        for (i, v) in values.iter().enumerate() {
            w.write_record([g.name.clone(), i.to_string(), format!("{v:.16e}")])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
