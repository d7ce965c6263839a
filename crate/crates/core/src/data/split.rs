use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Disjoint index sets over one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSplit {
    pub labelled: Vec<usize>,
    pub validation: Vec<usize>,
    pub pool: Vec<usize>,
}

/// Splits `dataset` into labelled, validation and pool indices.
///
/// In balanced mode the labelled set holds `n_labelled / K` rows of every
/// class; the validation set is balanced too when its size divides by `K`.
pub fn split_labels(
    dataset: &Dataset,
    n_labelled: usize,
    n_validation: usize,
    balanced: bool,
    seed: u64,
) -> Result<LabelSplit> {
    let n = dataset.len();
    if n_labelled + n_validation > n {
        return Err(Error::invalid(format!(
            "label budget {n_labelled} + validation {n_validation} exceeds {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split-labels", 0));

    let (labelled, validation) = if balanced {
        let k = dataset.num_classes;
        if !n_labelled.is_multiple_of(k) {
            return Err(Error::invalid(format!(
                "balanced split needs the label budget ({n_labelled}) divisible by {k} classes"
            )));
        }
        let labels = dataset.labels()?;
        let mut taken = vec![false; n];
        let labelled = take_balanced(&order, labels, k, n_labelled / k, &mut taken)?;
        let validation = if n_validation.is_multiple_of(k) {
            take_balanced(&order, labels, k, n_validation / k, &mut taken)?
        } else {
            let v: Vec<usize> = order.iter().copied().filter(|&i| !taken[i]).take(n_validation).collect();
            v.iter().for_each(|&i| taken[i] = true);
            v
        };
        (labelled, validation)
    } else {
        (
            order[..n_labelled].to_vec(),
            order[n_labelled..n_labelled + n_validation].to_vec(),
        )
    };

    let mut used = vec![false; n];
    labelled.iter().chain(&validation).for_each(|&i| used[i] = true);
    let pool = order.into_iter().filter(|&i| !used[i]).collect();
    Ok(LabelSplit {
        labelled,
        validation,
        pool,
    })
}

fn take_balanced(order: &[usize], labels: &[usize], k: usize, per_class: usize, taken: &mut [bool]) -> Result<Vec<usize>> {
    let mut counts = vec![0; k];
    let mut out = Vec::with_capacity(per_class * k);
    for &i in order {
        if !taken[i] && counts[labels[i]] < per_class {
            counts[labels[i]] += 1;
            taken[i] = true;
            out.push(i);
        }
    }
    if let Some(c) = counts.iter().position(|&c| c < per_class) {
        return Err(Error::invalid(format!("class {c} has fewer than {per_class} available rows")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    fn corpus() -> Dataset {
        gen_synthetic(&SyntheticSpec {
            per_class: 20,
            ..SyntheticSpec::vector(5, 4)
        })
        .unwrap()
    }

    #[test]
    fn balanced_counts() {
        let ds = corpus();
        let split = split_labels(&ds, 50, 10, true, 1).unwrap();
        let labels = ds.labels().unwrap();
        for c in 0..5 {
            assert_eq!(split.labelled.iter().filter(|&&i| labels[i] == c).count(), 10);
            assert_eq!(split.validation.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert_eq!(split.pool.len(), 40);
    }

    #[test]
    fn disjoint_and_exhaustive_boundary() {
        let ds = corpus();
        let split = split_labels(&ds, 60, 40, false, 2).unwrap();
        assert!(split.pool.is_empty());
        let mut all: Vec<usize> = split.labelled.iter().chain(&split.validation).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn invalid_requests() {
        let ds = corpus();
        assert!(split_labels(&ds, 80, 30, false, 0).is_err());
        assert!(split_labels(&ds, 12, 0, true, 0).is_err());
        assert!(split_labels(&ds, 100, 0, true, 0).is_ok());
        assert!(split_labels(&ds, 105, 0, true, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let ds = corpus();
        assert_eq!(split_labels(&ds, 10, 5, true, 4).unwrap(), split_labels(&ds, 10, 5, true, 4).unwrap());
    }
}
