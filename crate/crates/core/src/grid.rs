//! Adaptive candidate grids over the augmented `(x, seed)` space.
//!
//! Each Thompson-sampling iteration reweights the current grid by how close
//! the surrogate believes each point's discrepancy is to zero, resamples it,
//! and then tops it back up with random-walk proposals accepted by a
//! Metropolis-style rule.

use std::collections::HashSet;
use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input::{AugmentedInput, SeedSet};

/// Largest design for which several LHS candidates are compared by their
/// minimum pairwise distance.
const MAXIMIN_LIMIT: usize = 500;
const MAXIMIN_CANDIDATES: usize = 10;

/// Proposals allowed per grid slot before densification gives up.
pub const STALL_FACTOR: usize = 50;

/// A set of unique augmented inputs with a fixed capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    points: Vec<AugmentedInput>,
    members: HashSet<AugmentedInput>,
    capacity: usize,
}

impl CandidateGrid {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("grid capacity must be at least 1"));
        }
        Ok(Self {
            points: Vec::new(),
            members: HashSet::new(),
            capacity,
        })
    }

    pub fn from_points(points: Vec<AugmentedInput>, capacity: usize) -> Result<Self> {
        let mut grid = Self::new(capacity)?;
        for p in points {
            if grid.is_full() {
                return Err(Error::config("more points than grid capacity"));
            }
            if !grid.insert(p) {
                return Err(Error::config("duplicate grid point"));
            }
        }
        Ok(grid)
    }

    pub fn points(&self) -> &[AugmentedInput] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.points.len() >= self.capacity
    }

    pub fn contains(&self, p: &AugmentedInput) -> bool {
        self.members.contains(p)
    }

    /// Adds `p` unless it is already present or the grid is full.
    pub fn insert(&mut self, p: AugmentedInput) -> bool {
        if self.is_full() || self.members.contains(&p) {
            return false;
        }
        self.members.insert(p.clone());
        self.points.push(p);
        true
    }
}

/// Gaussian random walk in the unit cube, reflected at the faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    pub step: f64,
}

impl Default for ProposalSpec {
    fn default() -> Self {
        Self { step: 0.05 }
    }
}

impl ProposalSpec {
    pub fn new(step: f64) -> Result<Self> {
        let spec = Self { step };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step.is_finite() && self.step > 0.0 {
            Ok(())
        } else {
            Err(Error::config(format!("proposal step must be positive, got {}", self.step)))
        }
    }

    pub fn propose<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        x.iter()
            .map(|&xi| reflect(xi + self.step * rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }
}

/// Folds `y` back into `[0, 1]` by mirror reflection.
pub fn reflect(y: f64) -> f64 {
    let m = y.rem_euclid(2.0);
    if m > 1.0 {
        2.0 - m
    } else {
        m
    }
}

/// `n` points of a Latin hypercube in `[0,1]^d`, jittered within strata.
///
/// For small designs the best of several candidates by minimum pairwise
/// distance is kept.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let tries = if n <= MAXIMIN_LIMIT { MAXIMIN_CANDIDATES } else { 1 };
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    for _ in 0..tries {
        let design = one_lhs(n, d, rng);
        let score = min_sq_distance(&design);
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((design, score));
        }
    }
    best.map(|(design, _)| design).unwrap_or_default()
}

fn one_lhs<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    for k in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in points.iter_mut().zip(strata) {
            p[k] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

fn min_sq_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.min(d);
        }
    }
    best
}

/// An `m`-point LHS grid whose seeds are drawn uniformly from `seedset`.
pub fn lhs_grid<R: Rng + ?Sized>(
    m: usize,
    d: usize,
    seedset: &SeedSet,
    rng: &mut R,
) -> Result<CandidateGrid> {
    if m == 0 || d == 0 {
        return Err(Error::config("lhs_grid needs m >= 1 and d >= 1"));
    }
    let xs = latin_hypercube(m, d, rng);
    let seeds = seedset.seeds();
    let points = xs
        .into_iter()
        .map(|x| AugmentedInput::new(x, seeds[rng.random_range(0..seeds.len())]))
        .collect();
    CandidateGrid::from_points(points, m)
}

/// Normal(0, sigma_obs^2) density at `d`.
pub fn likelihood(d: f64, sigma_obs: f64) -> f64 {
    log_likelihood(d, sigma_obs).exp()
}

pub fn log_likelihood(d: f64, sigma_obs: f64) -> f64 {
    let z = d / sigma_obs;
    -0.5 * z * z - sigma_obs.ln() - 0.5 * (2.0 * PI).ln()
}

/// `sigma_obs` as a fraction of the spread of observed discrepancies, with a
/// floor.
pub fn relative_sigma_obs(discrepancies: &[f64], fraction: f64, floor: f64) -> f64 {
    let finite: Vec<f64> = discrepancies.iter().copied().filter(|d| d.is_finite()).collect();
    if finite.len() < 2 {
        return floor;
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let var = finite.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    (fraction * var.sqrt()).max(floor)
}

/// Metropolis-Hastings acceptance probability
/// `min(1, l_can * q_ratio / l_cur)`, where `q_ratio = q(x_can|x) / q(x|x_can)`.
/// A current point with zero likelihood accepts anything.
pub fn acceptance_ratio(l_can: f64, l_cur: f64, q_ratio: f64) -> f64 {
    if l_cur <= 0.0 {
        return 1.0;
    }
    (l_can * q_ratio / l_cur).min(1.0)
}

/// [`acceptance_ratio`] computed from log likelihoods.
pub fn log_acceptance_ratio(log_l_can: f64, log_l_cur: f64, log_q_ratio: f64) -> f64 {
    if log_l_cur == f64::NEG_INFINITY {
        return 1.0;
    }
    (log_l_can + log_q_ratio - log_l_cur).min(0.0).exp()
}

/// One uniform acceptance test.
pub fn mh_accept<R: Rng + ?Sized>(l_can: f64, l_cur: f64, q_ratio: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < acceptance_ratio(l_can, l_cur, q_ratio)
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub grid: CandidateGrid,
    /// Indices into the input grid of the survivors, ascending.
    pub kept: Vec<usize>,
    /// True when every weight was zero and the lowest samples were kept.
    pub fallback: bool,
}

/// Importance resampling: `capacity` draws with replacement in proportion to
/// `weights`, collapsed to the unique survivors.
///
/// If every weight is zero, the `ceil(capacity / 10)` points with the
/// smallest `samples` survive instead.
pub fn filter_grid<R: Rng + ?Sized>(
    grid: &CandidateGrid,
    weights: &[f64],
    samples: &[f64],
    rng: &mut R,
) -> Result<FilterOutcome> {
    let n = grid.len();
    for len in [weights.len(), samples.len()] {
        if len != n {
            return Err(Error::Shape {
                expected: n,
                got: len,
            });
        }
    }
    if n == 0 {
        return Err(Error::config("cannot filter an empty grid"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::numerical("grid weights must be finite and nonnegative"));
    }

    let m = grid.capacity();
    let (mut kept, fallback) = match WeightedIndex::new(weights) {
        Ok(dist) => {
            let mut hit = vec![false; n];
            for _ in 0..m {
                hit[dist.sample(rng)] = true;
            }
            ((0..n).filter(|&i| hit[i]).collect::<Vec<_>>(), false)
        }
        Err(_) => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]).then(a.cmp(&b)));
            order.truncate(m.div_ceil(10).min(n));
            (order, true)
        }
    };
    kept.sort_unstable();
    let points = kept.iter().map(|&i| grid.points()[i].clone()).collect();
    Ok(FilterOutcome {
        grid: CandidateGrid::from_points(points, m)?,
        kept,
        fallback,
    })
}

/// Source of surrogate discrepancy draws for off-grid candidates.
pub trait CandidateSampler {
    /// One independent predictive draw of the discrepancy at each query.
    fn marginal_draws(&self, queries: &[AugmentedInput], rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub grid: CandidateGrid,
    /// Log likelihood attached to each grid point, aligned with the grid.
    pub log_likelihoods: Vec<f64>,
    pub proposals: usize,
    /// True when the proposal budget ran out and LHS points filled the rest.
    pub stalled: bool,
}

/// Tops `grid` back up to capacity with random-walk proposals.
///
/// `log_likelihoods` holds the current log likelihood of each grid point.
/// Each proposal perturbs the `x` of a random grid point; the seeds are
/// tried in a fresh random order and the first candidate that passes the
/// acceptance test and is new to the grid is inserted.
#[allow(clippy::too_many_arguments)]
pub fn densify<R: Rng, S: CandidateSampler + ?Sized>(
    grid: CandidateGrid,
    log_likelihoods: Vec<f64>,
    sampler: &S,
    proposal: &ProposalSpec,
    seedset: &SeedSet,
    sigma_obs: f64,
    rng: &mut R,
) -> Result<DensifyOutcome> {
    proposal.validate()?;
    if grid.is_empty() {
        return Err(Error::config("cannot densify an empty grid"));
    }
    if log_likelihoods.len() != grid.len() {
        return Err(Error::Shape {
            expected: grid.len(),
            got: log_likelihoods.len(),
        });
    }
    if sigma_obs.is_nan() || sigma_obs <= 0.0 {
        return Err(Error::config("sigma_obs must be positive"));
    }

    let mut grid = grid;
    let mut logl = log_likelihoods;
    let limit = STALL_FACTOR * grid.capacity();
    let mut proposals = 0;
    let mut stalled = false;
    while !grid.is_full() {
        if proposals >= limit {
            stalled = true;
            break;
        }
        proposals += 1;
        let anchor = rng.random_range(0..grid.len());
        let x_can = proposal.propose(&grid.points()[anchor].x, rng);
        let mut seeds = seedset.seeds().to_vec();
        seeds.shuffle(rng);
        let candidates: Vec<AugmentedInput> = seeds
            .into_iter()
            .map(|r| AugmentedInput::new(x_can.clone(), r))
            .collect();
        let draws = sampler.marginal_draws(&candidates, rng)?;
        for (cand, d) in candidates.into_iter().zip(draws) {
            let l_can = log_likelihood(d, sigma_obs);
            let alpha = log_acceptance_ratio(l_can, logl[anchor], 0.0);
            if rng.random::<f64>() < alpha && !grid.contains(&cand) {
                grid.insert(cand);
                logl.push(l_can);
                break;
            }
        }
    }
    if stalled {
        let d = grid.points()[0].dim();
        let need = grid.capacity() - grid.len();
        let seeds = seedset.seeds();
        for x in latin_hypercube(need, d, rng) {
            let p = AugmentedInput::new(x, seeds[rng.random_range(0..seeds.len())]);
            if grid.insert(p) {
                logl.push(f64::NEG_INFINITY);
            }
        }
    }
    Ok(DensifyOutcome {
        grid,
        log_likelihoods: logl,
        proposals,
        stalled,
    })
}
