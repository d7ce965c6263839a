// Predictive metrics on a hand-built prediction set.

use ssbnn::evaluate::{accuracy, auroc, bald, ece, ensemble_average, entropy, nll, PredictiveDistribution};
use ssbnn::Tensor;

fn run_example() {
    let a = Tensor::matrix(4, 2, vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.5, 0.5]).unwrap();
    let b = Tensor::matrix(4, 2, vec![0.7, 0.3, 0.4, 0.6, 0.1, 0.9, 0.5, 0.5]).unwrap();
    let labels = [0, 1, 0, 1];
    let pred = PredictiveDistribution::from_draws(vec![a.clone(), b.clone()]).unwrap();
    println!("nll {:.4}", nll(&pred, &labels).unwrap());
    println!("accuracy {:.4}", accuracy(&pred, &labels).unwrap());
    println!("ece {:.4}", ece(&pred, &labels, 5).unwrap());
    println!("entropy {:?}", entropy(&pred));
    println!("bald {:?}", bald(&[a.clone(), b.clone()]).unwrap());

    let members = [
        PredictiveDistribution::new(a).unwrap(),
        PredictiveDistribution::new(b).unwrap(),
    ];
    let avg = ensemble_average(&members).unwrap();
    println!("ensemble row 2 {:?}", avg.row(2));
    println!("auroc {:.3}", auroc(&[0.9, 0.7, 0.6], &[0.1, 0.65, 0.2]).unwrap());
}

fn main() {
    run_example();
}
