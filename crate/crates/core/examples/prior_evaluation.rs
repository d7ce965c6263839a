// Prior-predictive agreement ρ per pair group and the ordering score α.

use ssbnn::data::{gen_synthetic, AugmentationSpec, SyntheticSpec};
use ssbnn::evaluate::{build_pair_groups, prior_eval_score_from_table, rho_table, PriorSampler};
use ssbnn::model::{EncoderConfig, ModelParams};
use ssbnn::pretrain::{pretrain, PretrainConfig};

fn run_example() {
    let ds = gen_synthetic(&SyntheticSpec {
        per_class: 30,
        ..SyntheticSpec::grid(3, 4, 6)
    })
    .unwrap();
    let encoder = EncoderConfig {
        hidden: vec![16],
        representation_dim: 8,
        projection_dim: 4,
        ..EncoderConfig::new(24)
    };
    let cfg = PretrainConfig {
        steps: 60,
        batch_pairs: 16,
        ..PretrainConfig::default()
    };
    let trained = pretrain(&ds.unlabelled(), None, &encoder, &cfg).unwrap().model;
    let groups = build_pair_groups(&ds, &AugmentationSpec::small_grid(), 15, 1).unwrap();

    for (name, model) in [("pretrained", trained), ("fresh", ModelParams::init(&encoder, 9).unwrap())] {
        let mut sampler = PriorSampler::new(model, 3, 2);
        sampler.samples = 100;
        let table = rho_table(&groups, &sampler).unwrap();
        let means: Vec<String> = groups
            .groups
            .iter()
            .zip(&table)
            .map(|(g, r)| format!("{} {:.3}", g.name, r.iter().sum::<f64>() / r.len() as f64))
            .collect();
        let score = prior_eval_score_from_table(&table, 2000, 3).unwrap();
        println!("{name}: {} alpha {:.3} ± {:.3}", means.join(", "), score.mean, score.std_error);
    }
}

fn main() {
    run_example();
}
