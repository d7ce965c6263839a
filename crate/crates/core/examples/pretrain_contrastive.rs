// Variational contrastive pretraining on a small synthetic corpus.

use ssbnn::data::{gen_synthetic, SyntheticSpec};
use ssbnn::model::EncoderConfig;
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
    let out = pretrain(&ds.unlabelled(), None, &encoder, &cfg).unwrap();
    for e in out.log.iter().step_by(20) {
        println!(
            "step {:>3} loss {:.4} kl {:.4} tau {:.4} sigma2 {:.5}",
            e.step, e.contrastive_loss, e.kl, e.tau, e.sigma2
        );
    }
    let z = out.model.encode(&ds.inputs).unwrap();
    println!("representations {:?}", z.shape());
}

fn main() {
    run_example();
}
