//! Template-plus-noise corpus with known class semantics.
//!
//! Each class owns a fixed template; a sample is its template plus i.i.d.
//! Gaussian noise. Vector templates are i.i.d. Gaussian. Grid templates are
//! horizontal stripes (one Gaussian intensity per row), so class identity
//! is unchanged by horizontal shifts and mirror flips while raw pixels are not.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

fn default_per_class() -> usize {
    100
}
fn default_template_scale() -> f64 {
    1.0
}
fn default_noise_std() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Flat input dimension; ignored when `grid` is set.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub grid: Option<(usize, usize)>,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_template_scale")]
    pub template_scale: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn vector(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim: Some(dim),
            grid: None,
            per_class: default_per_class(),
            template_scale: default_template_scale(),
            noise_std: default_noise_std(),
            seed: 0,
        }
    }

    pub fn grid(classes: usize, h: usize, w: usize) -> Self {
        Self {
            dim: None,
            grid: Some((h, w)),
            ..Self::vector(classes, h * w)
        }
    }

    pub fn input_dim(&self) -> Result<usize> {
        match (self.grid, self.dim) {
            (Some((h, w)), _) if h * w > 0 => Ok(h * w),
            (None, Some(d)) if d > 0 => Ok(d),
            _ => Err(Error::invalid("synthetic corpus needs a positive `dim` or `grid`")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("synthetic corpus needs at least 2 classes"));
        }
        if !(self.noise_std >= 0.0) || !(self.template_scale >= 0.0) {
            return Err(Error::invalid("noise std and template scale must be non-negative"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid("per_class must be at least 1"));
        }
        self.input_dim().map(|_| ())
    }

    /// The class templates, `classes × dim`.
    pub fn templates(&self) -> Result<Tensor> {
        self.validate()?;
        let dim = self.input_dim()?;
        let mut rng = rng::stream(self.seed, "synthetic-templates", 0);
        let mut data = Vec::with_capacity(self.classes * dim);
        for _ in 0..self.classes {
            match self.grid {
                Some((h, w)) => {
                    for _ in 0..h {
                        let v = self.template_scale * rng::normal(&mut rng);
                        data.extend(std::iter::repeat_n(v, w));
                    }
                }
                None => data.extend(rng::normals(&mut rng, dim).into_iter().map(|v| v * self.template_scale)),
            }
        }
        Tensor::new(vec![self.classes, dim], data)
    }
}

/// Draws `per_class` samples per class; sample `i` has label `i mod classes`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let templates = spec.templates()?;
    let dim = templates.cols();
    let n = spec.classes * spec.per_class;
    let mut rng = rng::stream(spec.seed, "synthetic-noise", 0);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.classes;
        labels.push(class);
        for &t in templates.row(class) {
            data.push(t + spec.noise_std * rng::normal(&mut rng));
        }
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, Some(labels), spec.classes, spec.grid)
}
