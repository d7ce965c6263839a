// Stripe-template corpus, augmentation and a contrastive task.

use ssbnn::data::{augment, build_contrastive_task, gen_synthetic, split_labels, AugmentationSpec, SyntheticSpec};
use ssbnn::rng;

fn run_example() {
    let spec = SyntheticSpec {
        per_class: 20,
        ..SyntheticSpec::grid(3, 4, 6)
    };
    let ds = gen_synthetic(&spec).unwrap();
    println!("{} rows of dim {}, {} classes", ds.len(), ds.dim(), ds.num_classes);

    let aug = AugmentationSpec::small_grid();
    let x = ds.inputs.row(0);
    let a = augment(x, ds.grid, &aug, &mut rng::stream(0, "example", 0)).unwrap();
    let moved = x.iter().zip(&a).filter(|(p, q)| (*p - *q).abs() > 1e-12).count();
    println!("augmentation changed {moved} of {} pixels", a.len());

    let task = build_contrastive_task(&ds, 4, &aug, &mut rng::stream(0, "example", 1)).unwrap();
    println!("task rows {} labels {:?} sources {:?}", task.inputs.rows(), task.labels, task.sources);

    let split = split_labels(&ds, 6, 3, true, 7).unwrap();
    println!(
        "labelled {} validation {} pool {}",
        split.labelled.len(),
        split.validation.len(),
        split.pool.len()
    );
    assert_eq!(split.labelled.len() + split.validation.len() + split.pool.len(), ds.len());
}

fn main() {
    run_example();
}
