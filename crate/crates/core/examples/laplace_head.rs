// Last-layer Laplace: MAP fit, GGN covariance, probit and sampled predictives.

use ssbnn::evaluate::nll;
use ssbnn::posterior::{fit_laplace, fit_map_head, predict_map, predict_probit, sample_predictive, MapBudget};
use ssbnn::rng;
use ssbnn::Tensor;

fn blobs(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut r = rng::stream(seed, "blobs", 0);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let c = if y == 0 { -1.0 } else { 1.0 };
        data.push(c + rng::normal(&mut r));
        data.push(c + rng::normal(&mut r));
        labels.push(y);
    }
    (Tensor::new(vec![n, 2], data).unwrap(), labels)
}

fn run_example() {
    let (x, y) = blobs(30, 0);
    let (xt, yt) = blobs(200, 1);
    let lambda = 1.0;
    let head = fit_map_head(&x, &y, 2, lambda, MapBudget::default()).unwrap();
    let post = fit_laplace(&x, &y, &head, lambda).unwrap();
    let map = predict_map(&head, &xt).unwrap();
    let probit = predict_probit(&post, &xt).unwrap();
    let mc = sample_predictive(&post, &xt, 2000, 2).unwrap();
    println!("test NLL map {:.4}", nll(&map, &yt).unwrap());
    println!("test NLL probit {:.4}", nll(&probit, &yt).unwrap());
    println!("test NLL sampled {:.4}", nll(&mc, &yt).unwrap());
    let far = Tensor::matrix(1, 2, vec![8.0, -8.0]).unwrap();
    println!(
        "far point: map {:.3} probit {:.3}",
        predict_map(&head, &far).unwrap().row(0)[0],
        predict_probit(&post, &far).unwrap().row(0)[0]
    );
}

fn main() {
    run_example();
}
