//! Datasets, augmentations and contrastive task construction.

mod augment;
mod idx;
mod split;
mod synthetic;
mod task;

pub use augment::{augment, AugmentationSpec, Transform};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use split::{split_labels, LabelSplit};
pub use synthetic::{gen_synthetic, SyntheticSpec};
pub use task::{build_contrastive_task, ContrastiveTask};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Input matrix (`n × D`, row-major) with optional class labels.
///
/// Image-like data records its grid shape so spatial augmentations can
/// interpret each row as an `h × w` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub grid: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        inputs: Tensor,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        grid: Option<(usize, usize)>,
    ) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() == 0 {
            return Err(Error::invalid("a dataset needs at least one row"));
        }
        if let Some(labels) = &labels {
            if labels.len() != inputs.rows() {
                return Err(Error::CountMismatch(format!(
                    "{} inputs but {} labels",
                    inputs.rows(),
                    labels.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    classes: num_classes,
                });
            }
        }
        if let Some((h, w)) = grid {
            if h * w != inputs.cols() {
                return Err(Error::ShapeMismatch {
                    op: "Dataset::new",
                    expected: vec![h * w],
                    actual: vec![inputs.cols()],
                });
            }
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid("dataset has no labels"))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::invalid("empty subset"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("index {bad} out of range for {} rows", self.len())));
        }
        Ok(Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            grid: self.grid,
        })
    }

    /// Copy without labels, as used for the unlabelled pool.
    pub fn unlabelled(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }

    /// Shifts and scales every value by the global mean and standard
    /// deviation; returns them.
    pub fn standardize(&mut self) -> (f64, f64) {
        let n = self.inputs.len() as f64;
        let mean = self.inputs.sum() / n;
        let var = self.inputs.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        self.inputs.data_mut().iter_mut().for_each(|v| *v = (*v - mean) / std);
        (mean, std)
    }

    pub fn to_container(&self, seed: u64) -> Container {
        let meta = serde_json::json!({
            "num_classes": self.num_classes,
            "grid": self.grid,
            "labelled": self.labels.is_some(),
        });
        let mut c = Container::new("dataset", seed, 0, meta);
        c.push("inputs", self.inputs.clone());
        if let Some(labels) = &self.labels {
            c.push("labels", Tensor::vector(labels.iter().map(|&l| l as f64).collect()));
        }
        c
    }

    pub fn from_container(mut c: Container) -> Result<Dataset> {
        c.expect_kind("dataset")?;
        let meta = c.metadata.configs.clone();
        let num_classes = meta["num_classes"]
            .as_u64()
            .ok_or_else(|| Error::Metadata("num_classes".into()))? as usize;
        let grid: Option<(usize, usize)> =
            serde_json::from_value(meta["grid"].clone()).map_err(|e| Error::Metadata(e.to_string()))?;
        let inputs = c.take("inputs")?;
        let labels = if meta["labelled"].as_bool().unwrap_or(false) {
            let raw = c.take("labels")?;
            Some(raw.data().iter().map(|&v| v as usize).collect())
        } else {
            None
        };
        Dataset::new(inputs, labels, num_classes, grid).map_err(|e| Error::Metadata(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let spec = SyntheticSpec {
            per_class: 3,
            ..SyntheticSpec::grid(3, 2, 4)
        };
        let ds = gen_synthetic(&spec).unwrap();
        let back = Dataset::from_container(Container::decode(&ds.to_container(1).encode().unwrap()).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_bad_labels() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(Dataset::new(x.clone(), Some(vec![0, 3]), 3, None).is_err());
        assert!(Dataset::new(x.clone(), Some(vec![0]), 3, None).is_err());
        assert!(Dataset::new(x, None, 3, Some((2, 2))).is_err());
    }

    #[test]
    fn standardize_moments() {
        let mut ds = Dataset::new(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), None, 2, None).unwrap();
        ds.standardize();
        let mean = ds.inputs.sum() / 4.0;
        let var = ds.inputs.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-12);
    }
}
