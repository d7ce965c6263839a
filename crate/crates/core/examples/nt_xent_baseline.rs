// Deterministic NT-XENT pretraining next to the variational objective.

use ssbnn::data::{gen_synthetic, SyntheticSpec};
use ssbnn::model::EncoderConfig;
use ssbnn::pretrain::{pretrain, Objective, PretrainConfig};

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
    for objective in [Objective::Variational, Objective::NtXent { temperature: 0.5 }] {
        let cfg = PretrainConfig {
            steps: 40,
            batch_pairs: 16,
            objective,
            ..PretrainConfig::default()
        };
        let log = pretrain(&ds.unlabelled(), None, &encoder, &cfg).unwrap().log;
        let (first, last) = (log.first().unwrap(), log.last().unwrap());
        println!(
            "{objective:?}: loss {:.4} -> {:.4}",
            first.contrastive_loss, last.contrastive_loss
        );
    }
}

fn main() {
    run_example();
}
