use std::collections::HashSet;
use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajbo::grid::{
    acceptance_ratio, densify, filter_grid, lhs_grid, likelihood, log_likelihood, mh_accept,
    CandidateGrid, CandidateSampler, ProposalSpec,
};
use trajbo::{AugmentedInput, Result, SeedSet};

fn seeds(n: u64) -> SeedSet {
    SeedSet::new((100..100 + n).collect()).unwrap()
}

#[test]
fn lhs_has_one_point_per_stratum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (m, d) in [(10, 2), (7, 3), (1, 4)] {
        let grid = lhs_grid(m, d, &seeds(3), &mut rng).unwrap();
        assert_eq!(grid.len(), m);
        for k in 0..d {
            let mut bins: Vec<usize> = grid
                .points()
                .iter()
                .map(|p| {
                    assert!((0.0..=1.0).contains(&p.x[k]));
                    (p.x[k] * m as f64).floor() as usize
                })
                .collect();
            bins.sort_unstable();
            assert_eq!(bins, (0..m).collect::<Vec<_>>());
        }
    }
}

#[test]
fn lhs_seeds_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let set = seeds(10);
    let grid = lhs_grid(10_000, 2, &set, &mut rng).unwrap();
    let mut counts = [0usize; 10];
    for p in grid.points() {
        counts[set.index_of(p.r).unwrap()] += 1;
    }
    let expected = 1000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 27.88, "chi-square {chi2}, counts {counts:?}");
}

#[test]
fn density_weights_match_direct_evaluation() {
    let sigma: f64 = 1.7;
    let ds: [f64; 5] = [0.0, -0.5, 1.7, 3.2, -6.0];
    for d in ds {
        let direct = (-(d * d) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
        assert!((likelihood(d, sigma) - direct).abs() < 1e-15);
        assert!((log_likelihood(d, sigma) - direct.ln()).abs() < 1e-12);
    }
}

#[test]
fn equal_weights_keep_about_63_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = 100;
    let grid = lhs_grid(m, 2, &seeds(5), &mut rng).unwrap();
    let trials = 500;
    let mut total = 0usize;
    for _ in 0..trials {
        let out = filter_grid(&grid, &vec![1.0; m], &vec![0.0; m], &mut rng).unwrap();
        assert!(out.grid.points().iter().all(|p| grid.contains(p)));
        total += out.grid.len();
    }
    let mean = total as f64 / trials as f64;
    let expected = m as f64 * (1.0 - (1.0 - 1.0 / m as f64).powi(m as i32));
    // Survivor counts have standard deviation near 4.5 for M = 100.
    assert!((mean - expected).abs() < 4.0 * 4.5 / (trials as f64).sqrt(), "{mean} vs {expected}");
}

#[test]
fn heavier_weight_survives_more_often() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = 20;
    let grid = lhs_grid(m, 1, &seeds(2), &mut rng).unwrap();
    let mut w = vec![1.0; m];
    w[0] = 2.0;
    let mut hits = vec![0usize; m];
    for _ in 0..10_000 {
        for i in filter_grid(&grid, &w, &vec![0.0; m], &mut rng).unwrap().kept {
            hits[i] += 1;
        }
    }
    assert!(hits[1..].iter().all(|&h| hits[0] > h), "{hits:?}");
}

#[test]
fn acceptance_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let l_can = rng.random_range(0.0..5.0);
        let l_cur = rng.random_range(1e-3..5.0);
        let q = rng.random_range(0.1..3.0);
        let expected = f64::min(1.0, (l_can * q) / l_cur);
        assert!((acceptance_ratio(l_can, l_cur, q) - expected).abs() < 1e-12);
    }
    assert_eq!(acceptance_ratio(0.2, 0.1, 1.0), 1.0);
}

#[test]
fn half_acceptance_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 10_000;
    let accepted = (0..n).filter(|_| mh_accept(0.05, 0.1, 1.0, &mut rng)).count();
    let freq = accepted as f64 / n as f64;
    assert!((freq - 0.5).abs() <= 0.02, "{freq}");
}

struct Flat;

impl CandidateSampler for Flat {
    fn marginal_draws(&self, q: &[AugmentedInput], _: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(vec![0.0; q.len()])
    }
}

/// Discrepancy equal to the distance from a target point.
struct Bowl;

impl CandidateSampler for Bowl {
    fn marginal_draws(&self, q: &[AugmentedInput], _: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(q.iter()
            .map(|p| ((p.x[0] - 0.7).powi(2) + (p.x[1] - 0.2).powi(2)).sqrt())
            .collect())
    }
}

#[test]
fn densify_keeps_points_and_fills_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let set = seeds(4);
    let start = lhs_grid(50, 2, &set, &mut rng).unwrap();
    let survivors = filter_grid(&start, &[1.0; 50], &[0.0; 50], &mut rng).unwrap().grid;
    let logl = vec![log_likelihood(0.0, 0.1); survivors.len()];
    let out = densify(survivors.clone(), logl, &Bowl, &ProposalSpec::default(), &set, 0.1, &mut rng).unwrap();
    assert!(!out.stalled);
    assert_eq!(out.grid.len(), 50);
    let unique: HashSet<&AugmentedInput> = out.grid.points().iter().collect();
    assert_eq!(unique.len(), 50);
    assert!(survivors.points().iter().all(|p| out.grid.contains(p)));
    assert!(out.grid.points().iter().all(|p| set.contains(p.r)));
    assert!(out.grid.points().iter().all(|p| p.x.iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn flat_likelihood_uses_every_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let set = seeds(5);
    let mut used = HashSet::new();
    for _ in 0..20 {
        let mut grid = CandidateGrid::new(30).unwrap();
        grid.insert(AugmentedInput::new(vec![0.5, 0.5], set.seeds()[0]));
        let out = densify(grid, vec![log_likelihood(0.0, 1.0)], &Flat, &ProposalSpec::default(), &set, 1.0, &mut rng).unwrap();
        // With a flat likelihood the first seed tried is always accepted.
        used.extend(out.grid.points().iter().map(|p| p.r));
        assert_eq!(out.proposals, 29);
    }
    assert_eq!(used.len(), 5);
}

#[test]
fn densify_drifts_toward_low_discrepancy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let set = seeds(3);
    let mut grid = CandidateGrid::new(200).unwrap();
    let anchor = AugmentedInput::new(vec![0.6, 0.3], set.seeds()[0]);
    let d0 = ((0.1f64).powi(2) * 2.0).sqrt();
    grid.insert(anchor);
    let out = densify(grid, vec![log_likelihood(d0, 0.05)], &Bowl, &ProposalSpec::default(), &set, 0.05, &mut rng)
        .unwrap();
    let mean_d: f64 = out
        .grid
        .points()
        .iter()
        .map(|p| ((p.x[0] - 0.7).powi(2) + (p.x[1] - 0.2).powi(2)).sqrt())
        .sum::<f64>()
        / out.grid.len() as f64;
    assert!(mean_d < 0.15, "mean distance {mean_d}");
}
