mod common;

use common::{dense_posterior, matern52, se, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use trajbo::gp::{
    build_covariance, fit_hyperparameters, log_marginal_likelihood, posterior, FitOptions,
    FitWarning, HyperBounds, KernelFamily, KernelSpec,
};
use trajbo::{AugmentedInput, EvaluationDataset};

fn dataset(xs: &[Vec<f64>], ys: &[f64]) -> EvaluationDataset {
    let inputs = xs.iter().map(|x| AugmentedInput::new(x.clone(), 0)).collect();
    EvaluationDataset::new(inputs, ys.to_vec()).unwrap()
}

fn oracle_kernel(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    match spec.family {
        KernelFamily::SquaredExponential => se(a, b, &spec.lengthscales, spec.variance),
        KernelFamily::Matern52 => matern52(a, b, &spec.lengthscales, spec.variance),
    }
}

/// Posterior moments and LML from the dense LU oracle.
fn oracle(data: &EvaluationDataset, spec: &KernelSpec, xstar: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, f64) {
    let xs: Vec<&Vec<f64>> = data.inputs().iter().map(|p| &p.x).collect();
    let n = xs.len();
    let k: Mat = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| oracle_kernel(spec, xs[i], xs[j]) + if i == j { spec.nugget } else { 0.0 })
                .collect()
        })
        .collect();
    let cross: Vec<Vec<f64>> = xstar
        .iter()
        .map(|q| xs.iter().map(|x| oracle_kernel(spec, x, q)).collect())
        .collect();
    let prior: Vec<f64> = xstar.iter().map(|q| oracle_kernel(spec, q, q) + spec.nugget).collect();
    dense_posterior(&k, &data.standardized_responses(), &cross, &prior)
}

fn random_case(rng: &mut ChaCha8Rng) -> (EvaluationDataset, KernelSpec, Vec<Vec<f64>>) {
    let d = rng.random_range(1..=3);
    let n = rng.random_range(1..=6);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let family = if rng.random_bool(0.5) {
        KernelFamily::SquaredExponential
    } else {
        KernelFamily::Matern52
    };
    let spec = KernelSpec::new(
        family,
        (0..d).map(|_| rng.random_range(0.1..1.5)).collect(),
        rng.random_range(0.2..3.0),
        rng.random_range(1e-3..0.5),
        0.5,
    )
    .unwrap();
    let xstar = (0..4).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
    (dataset(&xs, &ys), spec, xstar)
}

#[test]
fn posterior_matches_dense_oracle_on_random_small_datasets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let (data, spec, xstar) = random_case(&mut rng);
        let (m, v) = posterior(&data, &spec, &xstar).unwrap();
        let (om, ov, _) = oracle(&data, &spec, &xstar);
        for q in 0..xstar.len() {
            assert!((m[q] - om[q]).abs() < 1e-8, "case {case} mean {} vs {}", m[q], om[q]);
            assert!((v[q] - ov[q]).abs() < 1e-8, "case {case} var {} vs {}", v[q], ov[q]);
        }
    }
}

#[test]
fn two_point_hand_solve() {
    // SE kernel, l = 0.5, unit variance, nugget 0.1; x = 0 and 0.5.
    let spec = KernelSpec::new(KernelFamily::SquaredExponential, vec![0.5], 1.0, 0.1, 0.5).unwrap();
    let data = dataset(&[vec![0.0], vec![0.5]], &[1.0, 3.0]);
    let y = data.standardized_responses();
    let k12 = (-0.5f64).exp();
    let (a, b, c) = (1.1, k12, 1.1);
    let det = a * c - b * b;
    let inv = [[c / det, -b / det], [-b / det, a / det]];
    let q = 0.25;
    let kq = [(-0.5 * (q / 0.5f64).powi(2)).exp(), (-0.5 * ((q - 0.5) / 0.5f64).powi(2)).exp()];
    let w = [
        inv[0][0] * kq[0] + inv[0][1] * kq[1],
        inv[1][0] * kq[0] + inv[1][1] * kq[1],
    ];
    let mean = w[0] * y[0] + w[1] * y[1];
    let var = 1.1 - (w[0] * kq[0] + w[1] * kq[1]);
    let (m, v) = posterior(&data, &spec, &[vec![q]]).unwrap();
    assert!((m[0] - mean).abs() < 1e-10);
    assert!((v[0] - var).abs() < 1e-10);
}

#[test]
fn lml_matches_dense_determinant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (data, spec, _) = random_case(&mut rng);
        if data.len() > 5 {
            continue;
        }
        let ll = log_marginal_likelihood(&data, &spec).unwrap();
        let (_, _, oll) = oracle(&data, &spec, &[]);
        assert!((ll - oll).abs() < 1e-9, "{ll} vs {oll}");
    }
}

#[test]
fn kernel_hand_value() {
    let spec = KernelSpec::new(KernelFamily::SquaredExponential, vec![1.0], 1.0, 0.0, 0.5).unwrap();
    let cov = build_covariance(&[vec![0.0], vec![1.0]], &spec).unwrap();
    assert!((cov.matrix[(0, 1)] - 0.6065306597126334).abs() < 1e-15);
}

#[test]
fn variance_bounded_by_prior_and_shrinks_with_data() {
    let spec = KernelSpec::new(KernelFamily::Matern52, vec![0.3], 1.5, 0.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random()]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
    let queries: Vec<Vec<f64>> = (0..25).map(|i| vec![i as f64 / 24.0]).collect();
    let mut previous: Option<Vec<f64>> = None;
    for n in 1..=xs.len() {
        let (_, v) = posterior(&dataset(&xs[..n], &ys[..n]), &spec, &queries).unwrap();
        for (q, &vq) in v.iter().enumerate() {
            assert!(vq <= 1.5 + 1e-8);
            if let Some(prev) = &previous {
                assert!(vq <= prev[q] + 1e-8, "variance grew at query {q}");
            }
        }
        previous = Some(v);
    }
}

/// One draw of a zero-mean GP at `xs` via the oracle Cholesky-free route:
/// sequential conditioning.
fn sample_gp(xs: &[Vec<f64>], spec: &KernelSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut ys: Vec<f64> = Vec::new();
    for i in 0..xs.len() {
        let prior = oracle_kernel(spec, &xs[i], &xs[i]) + 1e-10;
        let (m, v) = if i == 0 {
            (0.0, prior)
        } else {
            let k: Mat = (0..i)
                .map(|a| {
                    (0..i)
                        .map(|b| oracle_kernel(spec, &xs[a], &xs[b]) + if a == b { 1e-10 } else { 0.0 })
                        .collect()
                })
                .collect();
            let cross = vec![(0..i).map(|a| oracle_kernel(spec, &xs[a], &xs[i])).collect()];
            let (m, v, _) = dense_posterior(&k, &ys, &cross, &[prior]);
            (m[0], v[0])
        };
        ys.push(m + v.max(0.0).sqrt() * rng.sample::<f64, _>(StandardNormal));
    }
    ys
}

#[test]
fn recovers_lengthscale_from_synthetic_gp() {
    let truth = KernelSpec::new(KernelFamily::SquaredExponential, vec![0.2], 1.0, 0.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut within = 0;
    for _ in 0..5 {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 + rng.random::<f64>()) / 40.0]).collect();
        let ys = sample_gp(&xs, &truth, &mut rng);
        let fit = fit_hyperparameters(
            &dataset(&xs, &ys),
            KernelFamily::SquaredExponential,
            &HyperBounds::default(),
            &FitOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert!(fit.warning.is_none());
        let l = fit.spec.lengthscales[0];
        if (0.1..=0.4).contains(&l) {
            within += 1;
        }
    }
    assert!(within >= 4, "lengthscale recovered in {within}/5 datasets");
}

#[test]
fn fit_respects_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bounds = HyperBounds {
        lengthscale: (0.05, 0.5),
        variance: (0.5, 2.0),
        nugget: (1e-6, 1e-2),
        rho: (0.05, 0.95),
    };
    for _ in 0..5 {
        let (data, _, _) = random_case(&mut rng);
        if data.len() < 3 {
            continue;
        }
        let fit = fit_hyperparameters(&data, KernelFamily::Matern52, &bounds, &FitOptions::default(), &mut rng)
            .unwrap();
        if fit.warning.is_some() {
            continue;
        }
        let s = &fit.spec;
        assert!(s.lengthscales.iter().all(|l| (0.05 - 1e-12..=0.5 + 1e-12).contains(l)));
        assert!((0.5 - 1e-12..=2.0 + 1e-12).contains(&s.variance));
        assert!((1e-6 - 1e-18..=1e-2 + 1e-12).contains(&s.nugget));
    }
}

#[test]
fn fit_is_deterministic_given_rng() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (data, _, _) = random_case(&mut rng);
    let run = |seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        fit_hyperparameters(&data, KernelFamily::Matern52, &HyperBounds::default(), &FitOptions::default(), &mut r)
            .unwrap()
    };
    assert_eq!(run(1), run(1));
}

#[test]
fn two_identical_points_are_degenerate() {
    let data = dataset(&[vec![0.2, 0.2]], &[1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fit = fit_hyperparameters(&data, KernelFamily::Matern52, &HyperBounds::default(), &FitOptions::default(), &mut rng)
        .unwrap();
    assert_eq!(fit.warning, Some(FitWarning::DegenerateData));
}

#[test]
fn noise_corruption_lowers_likelihood() {
    let spec = KernelSpec::new(KernelFamily::SquaredExponential, vec![0.3], 1.0, 1e-4, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 29.0]).collect();
    let clean = sample_gp(&xs, &spec, &mut rng);
    let noisy: Vec<f64> = clean
        .iter()
        .map(|y| y + 3.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    // Keep the standardization fixed so only the pattern changes.
    let std = trajbo::Standardization::IDENTITY;
    let mk = |ys: &[f64]| {
        EvaluationDataset::with_standardization(
            xs.iter().map(|x| AugmentedInput::new(x.clone(), 0)).collect(),
            ys.to_vec(),
            std,
        )
        .unwrap()
    };
    let a = log_marginal_likelihood(&mk(&clean), &spec).unwrap();
    let b = log_marginal_likelihood(&mk(&noisy), &spec).unwrap();
    assert!(a > b, "{a} <= {b}");
}
