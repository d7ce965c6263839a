use rand::seq::index;

use super::{augment, AugmentationSpec, Dataset};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A generated pseudo-classification dataset of `2M` augmented examples.
///
/// Rows are interleaved by source: rows `2i` and `2i + 1` are the two
/// augmentations of the `i`-th drawn example and both carry label `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveTask {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    /// Dataset row each subset index was drawn from.
    pub sources: Vec<usize>,
}

impl ContrastiveTask {
    /// Number of source examples `M`.
    pub fn subset_size(&self) -> usize {
        self.sources.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Draws `m` distinct rows of `unlabelled` and augments each twice with
/// independent draws from `rng`.
pub fn build_contrastive_task(
    unlabelled: &Dataset,
    m: usize,
    spec: &AugmentationSpec,
    rng: &mut Rng,
) -> Result<ContrastiveTask> {
    if m < 2 {
        return Err(Error::invalid(format!("contrastive task needs M >= 2, got {m}")));
    }
    if m > unlabelled.len() {
        return Err(Error::invalid(format!(
            "contrastive task needs M <= n ({m} > {})",
            unlabelled.len()
        )));
    }
    let sources = index::sample(rng, unlabelled.len(), m).into_vec();
    let dim = unlabelled.dim();
    let mut data = Vec::with_capacity(2 * m * dim);
    let mut labels = Vec::with_capacity(2 * m);
    for (i, &src) in sources.iter().enumerate() {
        let x = unlabelled.inputs.row(src);
        for _ in 0..2 {
            data.extend(augment(x, unlabelled.grid, spec, rng)?);
            labels.push(i);
        }
    }
    Ok(ContrastiveTask {
        inputs: Tensor::new(vec![2 * m, dim], data)?,
        labels,
        sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use crate::rng;

    fn corpus() -> Dataset {
        gen_synthetic(&SyntheticSpec {
            per_class: 10,
            ..SyntheticSpec::grid(3, 4, 8)
        })
        .unwrap()
    }

    #[test]
    fn two_examples_per_label() {
        let ds = corpus();
        let tiny = ds.subset(&[0, 1]).unwrap();
        let task = build_contrastive_task(&tiny, 2, &AugmentationSpec::identity(), &mut rng::stream(0, "task", 0)).unwrap();
        assert_eq!(task.labels, vec![0, 0, 1, 1]);
        assert_eq!(task.inputs.rows(), 4);
        // Identity augmentation leaves both views equal to the source.
        assert_eq!(task.inputs.row(0), tiny.inputs.row(task.sources[0]));
        assert_eq!(task.inputs.row(1), task.inputs.row(0));

        let task = build_contrastive_task(&ds, 7, &AugmentationSpec::small_grid(), &mut rng::stream(0, "task", 1)).unwrap();
        assert_eq!(task.len(), 14);
        for label in 0..7 {
            assert_eq!(task.labels.iter().filter(|&&l| l == label).count(), 2);
        }
        let mut s = task.sources.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 7);
    }

    #[test]
    fn degenerate_sizes_rejected() {
        let ds = corpus();
        let spec = AugmentationSpec::identity();
        assert!(build_contrastive_task(&ds, 1, &spec, &mut rng::stream(0, "task", 0)).is_err());
        assert!(build_contrastive_task(&ds, 31, &spec, &mut rng::stream(0, "task", 0)).is_err());
    }

    #[test]
    fn deterministic_given_stream() {
        let ds = corpus();
        let spec = AugmentationSpec::small_grid();
        let a = build_contrastive_task(&ds, 5, &spec, &mut rng::stream(9, "task", 3)).unwrap();
        let b = build_contrastive_task(&ds, 5, &spec, &mut rng::stream(9, "task", 3)).unwrap();
        assert_eq!(a, b);
    }
}
