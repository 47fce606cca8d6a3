//! Common-random-number GP over augmented inputs `(x, r)`.
//!
//! The covariance between two augmented inputs is `k(x, x')` when they share
//! a seed and `rho * k(x, x')` otherwise, plus the nugget on the diagonal.
//! Because the seed factor is the same for every pair of distinct seeds, the
//! prior over a full product grid `{x_1..x_n} x {r_1..r_l}` is the Kronecker
//! product `K_x (x) K_r`, which [`CrnGp::joint_sample`] exploits: it factors
//! the two small matrices separately, draws from the prior on the product
//! grid, and conditions each draw on the data by residual kriging.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::fit::{self, FitOptions, FitResult, FitWarning, HyperBounds};
use crate::gp::linalg::{cross_matrix, gram, mvn_draws, Conditioned, Factor};
use crate::gp::{check_dims, degenerate, CovarianceMatrix, KernelFamily, KernelSpec};
use crate::input::{x_key, AugmentedInput, EvaluationDataset, SeedSet};

/// Covariance between two augmented inputs, without the nugget.
#[inline]
pub fn crn_kernel(spec: &KernelSpec, a: &AugmentedInput, b: &AugmentedInput) -> f64 {
    let k = spec.k(&a.x, &b.x);
    if a.r == b.r {
        k
    } else {
        spec.rho * k
    }
}

/// Assembles and factors the CRN covariance (nugget and jitter on the
/// diagonal).
pub fn crn_covariance(points: &[AugmentedInput], spec: &KernelSpec) -> Result<CovarianceMatrix> {
    if points.is_empty() {
        return Err(Error::config("covariance needs at least one point"));
    }
    check_dims(points.iter().map(AugmentedInput::dim), spec)?;
    let mut matrix = gram(points, |a, b| crn_kernel(spec, a, b));
    for i in 0..matrix.nrows() {
        matrix[(i, i)] += spec.nugget;
    }
    let factor = Factor::new(matrix.clone(), spec.variance)?;
    for i in 0..matrix.nrows() {
        matrix[(i, i)] += factor.jitter();
    }
    Ok(CovarianceMatrix { matrix, factor })
}

/// How [`CrnGp::joint_sample`] draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerPath {
    /// Kronecker when every seed is in the seed set, dense otherwise.
    #[default]
    Auto,
    Dense,
    Kronecker,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub path: SamplerPath,
    /// Largest grid (or virtual product grid) the sampler will accept.
    pub cap: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            path: SamplerPath::Auto,
            cap: 20_000,
        }
    }
}

/// A CRN GP conditioned on a dataset; predictions are on the standardized
/// scale.
#[derive(Debug, Clone)]
pub struct CrnGp {
    train: Vec<AugmentedInput>,
    y: DVector<f64>,
    spec: KernelSpec,
    cond: Conditioned,
}

impl CrnGp {
    pub fn new(data: &EvaluationDataset, spec: &KernelSpec) -> Result<Self> {
        spec.validate()?;
        let train = data.inputs().to_vec();
        let y = DVector::from_vec(data.standardized_responses());
        let cond = if train.is_empty() {
            Conditioned::prior()
        } else {
            let cov = crn_covariance(&train, spec)?;
            Conditioned::new(cov.matrix, y.clone(), spec.variance)?
        };
        Ok(Self {
            train,
            y,
            spec: spec.clone(),
            cond,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.cond.log_marginal_likelihood()
    }

    fn cross(&self, queries: &[AugmentedInput]) -> DMatrix<f64> {
        cross_matrix(&self.train, queries, |a, b| crn_kernel(&self.spec, a, b))
    }

    /// Predictive means and variances (nugget included).
    pub fn predict(&self, queries: &[AugmentedInput]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dims(queries.iter().map(AugmentedInput::dim), &self.spec)?;
        let prior: Vec<f64> = queries
            .iter()
            .map(|q| self.spec.k(&q.x, &q.x) + self.spec.nugget)
            .collect();
        Ok(self.cond.moments(&self.cross(queries), &prior))
    }

    /// Joint predictive mean and covariance over `queries`.
    pub fn predictive_covariance(
        &self,
        queries: &[AugmentedInput],
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_dims(queries.iter().map(AugmentedInput::dim), &self.spec)?;
        let k_cross = self.cross(queries);
        let mut k_qq = gram(queries, |a, b| crn_kernel(&self.spec, a, b));
        for i in 0..k_qq.nrows() {
            k_qq[(i, i)] += self.spec.nugget;
        }
        Ok((self.cond.mean(&k_cross), self.cond.covariance(&k_cross, k_qq)))
    }

    /// `count` joint draws from the predictive distribution over `grid`.
    ///
    /// Both paths target the same distribution: mean and covariance of
    /// [`CrnGp::predictive_covariance`].
    pub fn joint_sample<R: Rng + ?Sized>(
        &self,
        grid: &[AugmentedInput],
        count: usize,
        seeds: Option<&SeedSet>,
        options: SampleOptions,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        if grid.is_empty() {
            return Err(Error::config("cannot sample over an empty grid"));
        }
        if count == 0 {
            return Ok(Vec::new());
        }
        let covered = seeds.filter(|s| {
            grid.iter().chain(&self.train).all(|p| s.contains(p.r))
        });
        match (options.path, covered) {
            (SamplerPath::Dense, _) | (SamplerPath::Auto, None) => {
                self.dense_sample(grid, count, options.cap, rng)
            }
            (SamplerPath::Kronecker | SamplerPath::Auto, Some(s)) => {
                self.kronecker_sample(grid, count, s, options.cap, rng)
            }
            (SamplerPath::Kronecker, None) => Err(Error::config(
                "Kronecker sampling needs every grid and training seed in the seed set",
            )),
        }
    }

    fn dense_sample<R: Rng + ?Sized>(
        &self,
        grid: &[AugmentedInput],
        count: usize,
        cap: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        if grid.len() > cap {
            return Err(Error::GridTooLarge {
                size: grid.len(),
                cap,
            });
        }
        let (mean, cov) = self.predictive_covariance(grid)?;
        mvn_draws(&mean, cov, count, rng)
    }

    fn kronecker_sample<R: Rng + ?Sized>(
        &self,
        grid: &[AugmentedInput],
        count: usize,
        seeds: &SeedSet,
        cap: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        check_dims(grid.iter().map(AugmentedInput::dim), &self.spec)?;
        // Unique x's over grid and training inputs, in first-seen order.
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut unique: Vec<Vec<f64>> = Vec::new();
        let mut locate = |p: &AugmentedInput| -> (usize, usize) {
            let u = *index.entry(x_key(&p.x)).or_insert_with(|| {
                unique.push(p.x.clone());
                unique.len() - 1
            });
            (u, seeds.index_of(p.r).expect("seed coverage checked"))
        };
        let grid_at: Vec<(usize, usize)> = grid.iter().map(&mut locate).collect();
        let train_at: Vec<(usize, usize)> = self.train.iter().map(&mut locate).collect();

        let l = seeds.len();
        if unique.len() * l > cap {
            return Err(Error::GridTooLarge {
                size: unique.len() * l,
                cap,
            });
        }
        let (lx, lr) = kronecker_factors(&unique, l, &self.spec)?;

        let k_grid_train = self.cross(grid).transpose();
        let noise_sd = self.spec.nugget.sqrt();
        let train_noise_sd = (self.spec.nugget + self.cond.jitter()).sqrt();
        let n_u = unique.len();

        let mut draws = Vec::with_capacity(count);
        for _ in 0..count {
            let z = DMatrix::from_fn(n_u, l, |_, _| rng.sample::<f64, _>(StandardNormal));
            // vec(F) = (L_x (x) L_r) vec(Z) with x-major ordering.
            let f = &lx * z * lr.transpose();
            let mut draw: Vec<f64> = grid_at
                .iter()
                .map(|&(u, k)| f[(u, k)] + noise_sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if let Some(factor) = self.cond.factor() {
                let residual = DVector::from_iterator(
                    train_at.len(),
                    train_at.iter().enumerate().map(|(i, &(u, k))| {
                        self.y[i]
                            - f[(u, k)]
                            - train_noise_sd * rng.sample::<f64, _>(StandardNormal)
                    }),
                );
                let correction = &k_grid_train * factor.solve(&residual);
                for (d, c) in draw.iter_mut().zip(correction.iter()) {
                    *d += c;
                }
            }
            draws.push(draw);
        }
        Ok(draws)
    }
}

/// Lower Cholesky factors of `K_x` over `unique_x` and of the seed
/// correlation `K_r` (ones on the diagonal, `rho` elsewhere) for `n_seeds`
/// seeds.
pub fn kronecker_factors(
    unique_x: &[Vec<f64>],
    n_seeds: usize,
    spec: &KernelSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let kx = gram(unique_x, |a, b| spec.k(a, b));
    let lx = Factor::new(kx, spec.variance)?.l();
    let kr = DMatrix::from_fn(n_seeds, n_seeds, |i, j| if i == j { 1.0 } else { spec.rho });
    let lr = Factor::new(kr, 1.0)?.l();
    Ok((lx, lr))
}

/// The product grid `unique_x x seeds` in the x-major order used by
/// [`kronecker_factors`].
pub fn product_grid(unique_x: &[Vec<f64>], seeds: &SeedSet) -> Vec<AugmentedInput> {
    unique_x
        .iter()
        .flat_map(|x| seeds.seeds().iter().map(|&r| AugmentedInput::new(x.clone(), r)))
        .collect()
}

/// Predictive moments of the CRN GP at `queries`.
pub fn crn_posterior(
    data: &EvaluationDataset,
    spec: &KernelSpec,
    queries: &[AugmentedInput],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::config("posterior needs at least one training point"));
    }
    CrnGp::new(data, spec)?.predict(queries)
}

/// Joint predictive draws over `grid` with default sampling options.
pub fn joint_sample<R: Rng + ?Sized>(
    data: &EvaluationDataset,
    spec: &KernelSpec,
    grid: &[AugmentedInput],
    count: usize,
    seeds: Option<&SeedSet>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    CrnGp::new(data, spec)?.joint_sample(grid, count, seeds, SampleOptions::default(), rng)
}

/// Fits lengthscales, variance, nugget and `rho` by marginal likelihood.
pub fn fit_crn_hyperparameters<R: Rng + ?Sized>(
    data: &EvaluationDataset,
    family: KernelFamily,
    bounds: &HyperBounds,
    options: &FitOptions,
    warm: Option<&KernelSpec>,
    rng: &mut R,
) -> Result<FitResult> {
    let dim = data
        .dim()
        .ok_or_else(|| Error::config("cannot fit hyperparameters on an empty dataset"))?;
    let xs: Vec<&[f64]> = data.inputs().iter().map(|p| p.x.as_slice()).collect();
    let fallback = fit::median_heuristic(family, &xs, dim, bounds);
    if degenerate(&xs, data.responses()) {
        return Ok(FitResult {
            spec: warm.cloned().unwrap_or(fallback),
            log_likelihood: None,
            warning: Some(FitWarning::DegenerateData),
        });
    }
    let layout = fit::Layout {
        dim,
        nugget: true,
        rho: true,
    };
    let best = fit::maximize(&fallback, layout, bounds, options, warm, rng, |spec| {
        CrnGp::new(data, spec)
            .ok()
            .map(|gp| gp.log_marginal_likelihood())
    });
    Ok(match best {
        Some((spec, ll)) => FitResult {
            spec,
            log_likelihood: Some(ll),
            warning: None,
        },
        None => FitResult {
            spec: fallback,
            log_likelihood: None,
            warning: Some(FitWarning::AllStartsFailed),
        },
    })
}
