// Pool-based active learning with BALD, entropy and random acquisition.

use ssbnn::active::{area_under_curve, run_active_seed, AcquisitionKind, AcquisitionStrategy, ActiveConfig, EncoderSource};
use ssbnn::data::{gen_synthetic, SyntheticSpec};
use ssbnn::model::{EncoderConfig, ModelParams};

fn run_example() {
    let all = gen_synthetic(&SyntheticSpec {
        per_class: 60,
        noise_std: 0.8,
        ..SyntheticSpec::vector(3, 6)
    })
    .unwrap();
    let train = all.subset(&(0..120).collect::<Vec<_>>()).unwrap();
    let test = all.subset(&(120..180).collect::<Vec<_>>()).unwrap();
    let encoder = EncoderConfig {
        hidden: vec![16],
        representation_dim: 8,
        projection_dim: 4,
        ..EncoderConfig::new(6)
    };
    let source = EncoderSource::Frozen(ModelParams::init(&encoder, 1).unwrap());
    for kind in [AcquisitionKind::Bald, AcquisitionKind::Entropy, AcquisitionKind::Random] {
        let cfg = ActiveConfig {
            strategy: AcquisitionStrategy { kind, mc_draws: 30 },
            initial_labels: 12,
            validation_size: 3,
            per_round: 6,
            budget: 36,
            ..ActiveConfig::new(kind)
        };
        let run = run_active_seed(&train, &test, &source, &cfg, 0).unwrap();
        let curve: Vec<String> = run
            .curve
            .iter()
            .map(|p| format!("{}:{:.2}", p.n_labels, p.accuracy))
            .collect();
        println!("{:<8} auc {:.4} [{}]", kind.name(), area_under_curve(&run.curve), curve.join(" "));
    }
}

fn main() {
    run_example();
}
