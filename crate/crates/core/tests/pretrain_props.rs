use std::f64::consts::E;

use proptest::prelude::*;
use ssbnn::data::{gen_synthetic, AugmentationSpec, ContrastiveTask, SyntheticSpec};
use ssbnn::model::{Dense, EncoderConfig, ModelParams};
use ssbnn::pretrain::{
    contrastive_loss, downstream_elbo, kl_mean_per_param, nt_xent_loss, pretrain, sample_wc, DownstreamVariational,
    PairEmbeddings, PretrainConfig, VariationalState,
};
use ssbnn::rng;
use ssbnn::Tensor;

fn identity_model() -> ModelParams {
    let eye = || Dense {
        weight: Tensor::eye(2),
        bias: Tensor::zeros(&[2]),
    };
    let config = EncoderConfig {
        hidden: vec![2],
        representation_dim: 2,
        projection_hidden: Some(2),
        projection_dim: 2,
        ..EncoderConfig::new(2)
    };
    ModelParams {
        config,
        encoder: vec![eye(), eye()],
        projection: vec![eye(), eye()],
    }
}

fn orthonormal_task() -> ContrastiveTask {
    ContrastiveTask {
        inputs: Tensor::matrix(4, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap(),
        labels: vec![0, 0, 1, 1],
        sources: vec![0, 1],
    }
}

#[test]
fn orthonormal_pairs_give_hand_cross_entropy() {
    let state = VariationalState {
        log_tau: 0.0,
        log_sigma2: -300.0,
    };
    let l = contrastive_loss(
        &orthonormal_task(),
        &identity_model(),
        &state,
        &PretrainConfig::default(),
        &mut rng::stream(0, "noise", 0),
    )
    .unwrap();
    let ce = l.tape.value(l.cross_entropy).item();
    assert!((ce + (E / (E + 1.0)).ln()).abs() < 1e-12, "{ce}");
    assert!((ce - 0.3133).abs() < 1e-4);
}

fn small_task(seed: u64, m: usize) -> (ContrastiveTask, ModelParams) {
    let ds = gen_synthetic(&SyntheticSpec {
        per_class: 6,
        seed,
        ..SyntheticSpec::grid(3, 2, 4)
    })
    .unwrap();
    let task = ssbnn::data::build_contrastive_task(
        &ds,
        m,
        &AugmentationSpec::small_grid(),
        &mut rng::stream(seed, "task", 0),
    )
    .unwrap();
    let config = EncoderConfig {
        hidden: vec![8],
        representation_dim: 5,
        projection_dim: 3,
        ..EncoderConfig::new(8)
    };
    (task, ModelParams::init(&config, seed).unwrap())
}

/// Moves pair `i` of `task` to position `perm[i]` and relabels it.
fn permute_pairs(task: &ContrastiveTask, perm: &[usize]) -> ContrastiveTask {
    let m = perm.len();
    let p = task.inputs.cols();
    let mut data = vec![0.0; 2 * m * p];
    let mut sources = vec![0; m];
    for (i, &j) in perm.iter().enumerate() {
        for v in 0..2 {
            data[(2 * j + v) * p..(2 * j + v + 1) * p].copy_from_slice(task.inputs.row(2 * i + v));
        }
        sources[j] = task.sources[i];
    }
    ContrastiveTask {
        inputs: Tensor::new(vec![2 * m, p], data).unwrap(),
        labels: (0..m).flat_map(|i| [i, i]).collect(),
        sources,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kl_is_non_negative_and_zero_only_at_prior(
        mu in prop::collection::vec(-3.0f64..3.0, 1..6),
        sigma2 in 1e-3f64..5.0,
        prior in 0.1f64..5.0,
    ) {
        let kl = kl_mean_per_param(&mu, sigma2, prior).unwrap();
        prop_assert!(kl >= -1e-15);
        let zero = kl_mean_per_param(&vec![0.0; mu.len()], prior, prior).unwrap();
        prop_assert!(zero.abs() < 1e-15);
        if mu.iter().any(|m| m.abs() > 1e-3) || (sigma2 - prior).abs() > 1e-3 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn nt_xent_ignores_pair_order_and_view_order(seed in any::<u64>(), m in 2usize..6) {
        let mut r = rng::stream(seed, "nt", 0);
        let mut rows: Vec<Vec<f64>> = (0..2 * m).map(|_| rng::normals(&mut r, 3)).collect();
        for row in rows.iter_mut() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        }
        let z = Tensor::from_rows(&rows).unwrap();
        let base = nt_xent_loss(&PairEmbeddings::from_interleaved(&z).unwrap(), 0.5).unwrap();
        let mut swapped = rows.clone();
        for i in 0..m {
            swapped.swap(2 * i, 2 * i + 1);
        }
        swapped.rotate_left(2);
        let z2 = Tensor::from_rows(&swapped).unwrap();
        let other = nt_xent_loss(&PairEmbeddings::from_interleaved(&z2).unwrap(), 0.5).unwrap();
        prop_assert!((base - other).abs() < 1e-12);
    }

    #[test]
    fn contrastive_loss_is_invariant_to_pair_order_without_noise(seed in any::<u64>()) {
        let (task, model) = small_task(seed, 4);
        let perm = [2, 0, 3, 1];
        let state = VariationalState { log_tau: -0.4, log_sigma2: -300.0 };
        let cfg = PretrainConfig::default();
        let a = contrastive_loss(&task, &model, &state, &cfg, &mut rng::stream(seed, "n", 0)).unwrap();
        let b = contrastive_loss(&permute_pairs(&task, &perm), &model, &state, &cfg, &mut rng::stream(seed, "n", 0))
            .unwrap();
        prop_assert!((a.value() - b.value()).abs() < 1e-12);
    }
}

#[test]
fn contrastive_loss_is_invariant_to_pair_order_in_distribution() {
    let (task, model) = small_task(3, 4);
    let permuted = permute_pairs(&task, &[3, 1, 0, 2]);
    let state = VariationalState {
        log_tau: -0.4,
        log_sigma2: 0.0,
    };
    let cfg = PretrainConfig::default();
    let n = 4000;
    let stats = |t: &ContrastiveTask| {
        let v: Vec<f64> = (0..n)
            .map(|i| contrastive_loss(t, &model, &state, &cfg, &mut rng::stream(9, "n", i)).unwrap().value())
            .collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    };
    let (a, sa) = stats(&task);
    let (b, sb) = stats(&permuted);
    assert!((a - b).abs() < 4.0 * (sa * sa + sb * sb).sqrt(), "{a} vs {b}");
}

fn pairs(seed: u64) -> PairEmbeddings {
    let z = Tensor::new(vec![4, 3], rng::normals(&mut rng::stream(seed, "z", 0), 12)).unwrap();
    PairEmbeddings::from_interleaved(&z).unwrap()
}

#[test]
fn sample_wc_mean_is_scaled_pair_mean() {
    let p = pairs(1);
    let state = VariationalState {
        log_tau: 0.5f64.ln(),
        log_sigma2: 0.3f64.ln(),
    };
    let n = 100_000;
    let mut r = rng::stream(2, "wc", 0);
    let mut sum = 0.0;
    for _ in 0..n {
        sum += sample_wc(&p, &state, &mut r).get2(0, 0);
    }
    let mean = sum / n as f64;
    let want = p.omega.get2(0, 0) / 0.5;
    let se = (0.3f64 / n as f64).sqrt();
    assert!((mean - want).abs() < 3.0 * se, "{mean} vs {want}");
}

#[test]
fn reparameterised_gradient_matches_analytic_expectation() {
    // One pair, one projection dimension: W = ω/τ + σξ and f(W) = W².
    let z = Tensor::matrix(2, 1, vec![0.8, 0.4]).unwrap();
    let p = PairEmbeddings::from_interleaved(&z).unwrap();
    let omega = p.omega.item();
    let state = VariationalState {
        log_tau: 0.7f64.ln(),
        log_sigma2: 0.2f64.ln(),
    };
    let analytic = |lt: f64, ls: f64| (omega * (-lt).exp()).powi(2) + ls.exp();
    let h = 1e-6;
    let fd_tau = (analytic(state.log_tau + h, state.log_sigma2) - analytic(state.log_tau - h, state.log_sigma2)) / (2.0 * h);
    let fd_sigma =
        (analytic(state.log_tau, state.log_sigma2 + h) - analytic(state.log_tau, state.log_sigma2 - h)) / (2.0 * h);

    let mu = omega * (-state.log_tau).exp();
    let n = 100_000;
    let mut r = rng::stream(4, "reparam", 0);
    let (mut g_tau, mut g_sigma) = (0.0, 0.0);
    for _ in 0..n {
        let w = sample_wc(&p, &state, &mut r).item();
        g_tau += 2.0 * w * -mu;
        g_sigma += 2.0 * w * (w - mu) / 2.0;
    }
    g_tau /= n as f64;
    g_sigma /= n as f64;
    assert!((g_tau - fd_tau).abs() < 0.02 * fd_tau.abs(), "{g_tau} vs {fd_tau}");
    assert!((g_sigma - fd_sigma).abs() < 0.02 * fd_sigma.abs(), "{g_sigma} vs {fd_sigma}");
}

#[test]
fn pretraining_descends() {
    let ds = gen_synthetic(&SyntheticSpec {
        per_class: 40,
        ..SyntheticSpec::grid(4, 4, 8)
    })
    .unwrap();
    let encoder = EncoderConfig {
        hidden: vec![32],
        representation_dim: 16,
        projection_dim: 8,
        ..EncoderConfig::new(32)
    };
    for seed in 0..3 {
        let cfg = PretrainConfig {
            steps: 200,
            batch_pairs: 32,
            seed,
            ..PretrainConfig::default()
        };
        let log = pretrain(&ds.unlabelled(), None, &encoder, &cfg).unwrap().log;
        let mean = |s: &[ssbnn::pretrain::LogEntry]| s.iter().map(|e| e.contrastive_loss).sum::<f64>() / s.len() as f64;
        let (first, last) = (mean(&log[..20]), mean(&log[180..]));
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn downstream_likelihood_estimate_agrees_with_reference() {
    let z = Tensor::matrix(4, 2, vec![1.0, 0.2, -0.5, 1.0, 0.3, -1.2, -1.0, -0.4]).unwrap();
    let labels = [0, 1, 0, 1];
    let mut q = DownstreamVariational::init(2, 2, 0.5f64.ln()).unwrap();
    q.mean_weight = Tensor::matrix(2, 2, vec![1.0, -0.5, -0.3, 0.8]).unwrap();
    let estimate = |n: usize, seed: u64| {
        let mut r = rng::stream(seed, "ll", 0);
        let v: Vec<f64> = (0..n)
            .map(|_| downstream_elbo(&z, &labels, &q, 1.0, &mut r).unwrap().log_likelihood)
            .collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    };
    let (small, se) = estimate(10_000, 1);
    let (reference, _) = estimate(1_000_000, 2);
    assert!((small - reference).abs() < 3.0 * se, "{small} vs {reference} (se {se})");
}
