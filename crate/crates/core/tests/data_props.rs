use std::collections::HashSet;

use proptest::prelude::*;
use ssbnn::data::{augment, build_contrastive_task, gen_synthetic, split_labels, AugmentationSpec, SyntheticSpec};
use ssbnn::rng;

fn nearest(templates: &ssbnn::Tensor, x: &[f64]) -> usize {
    (0..templates.rows())
        .map(|c| {
            let d: f64 = templates.row(c).iter().zip(x).map(|(t, v)| (t - v).powi(2)).sum();
            (c, d)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn contrastive_task_pairs_distinct_sources(seed in any::<u64>(), m in 2usize..12) {
        let ds = gen_synthetic(&SyntheticSpec { per_class: 4, seed, ..SyntheticSpec::grid(3, 3, 4) }).unwrap();
        let task = build_contrastive_task(&ds, m, &AugmentationSpec::small_grid(), &mut rng::stream(seed, "t", 0))
            .unwrap();
        prop_assert_eq!(task.inputs.shape(), &[2 * m, 12][..]);
        prop_assert_eq!(task.sources.len(), m);
        prop_assert!(task.sources.iter().all(|&s| s < ds.len()));
        prop_assert_eq!(task.sources.iter().collect::<HashSet<_>>().len(), m);
        for i in 0..m {
            prop_assert_eq!(task.labels.iter().filter(|&&l| l == i).count(), 2);
            prop_assert_eq!((task.labels[2 * i], task.labels[2 * i + 1]), (i, i));
        }
    }

    #[test]
    fn label_splits_are_disjoint_exhaustive_and_balanced(seed in any::<u64>(), per in 1usize..5, val in 0usize..6) {
        let ds = gen_synthetic(&SyntheticSpec { per_class: 8, seed, ..SyntheticSpec::vector(4, 3) }).unwrap();
        let s = split_labels(&ds, 4 * per, val, true, seed).unwrap();
        let labels = ds.labels().unwrap();
        let all: Vec<usize> = s.labelled.iter().chain(&s.validation).chain(&s.pool).copied().collect();
        prop_assert_eq!(all.len(), ds.len());
        prop_assert_eq!(all.iter().collect::<HashSet<_>>().len(), ds.len());
        prop_assert_eq!(s.validation.len(), val);
        for c in 0..4 {
            prop_assert_eq!(s.labelled.iter().filter(|&&i| labels[i] == c).count(), per);
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed(seed in any::<u64>()) {
        let spec = SyntheticSpec { per_class: 3, seed, ..SyntheticSpec::grid(2, 2, 3) };
        prop_assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: seed.wrapping_add(1), ..spec };
        prop_assert_ne!(gen_synthetic(&other).unwrap(), gen_synthetic(&spec).unwrap());
    }
}

#[test]
fn augmentations_preserve_the_class() {
    let spec = SyntheticSpec {
        per_class: 100,
        seed: 4,
        ..SyntheticSpec::grid(5, 4, 8)
    };
    let ds = gen_synthetic(&spec).unwrap();
    let templates = spec.templates().unwrap();
    let labels = ds.labels().unwrap();
    let aug = AugmentationSpec::small_grid();
    let mut r = rng::stream(4, "probe", 0);
    let mut hits = 0;
    for (i, &y) in labels.iter().enumerate() {
        let x = augment(ds.inputs.row(i), ds.grid, &aug, &mut r).unwrap();
        hits += usize::from(nearest(&templates, &x) == y);
    }
    let rate = hits as f64 / labels.len() as f64;
    assert!(rate > 0.9, "{rate}");
}
