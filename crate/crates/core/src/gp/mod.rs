//! Gaussian-process regression on the parameter space.
//!
//! Responses are standardized before fitting so the prior mean is zero;
//! every mean and variance returned here is on that standardized scale (see
//! [`Standardization`](crate::input::Standardization) to map back).

pub mod fit;
mod kernel;
pub mod linalg;

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::input::{x_key, EvaluationDataset};

pub use fit::{FitOptions, FitResult, FitWarning, HyperBounds};
pub use kernel::{KernelFamily, KernelSpec};
use linalg::{gram, Conditioned, Factor};

/// `K + tau^2 I` (plus any jitter the factorization needed) and its factor.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    pub matrix: DMatrix<f64>,
    pub factor: Factor,
}

/// Assembles and factors the training covariance over parameter vectors.
pub fn build_covariance(xs: &[Vec<f64>], spec: &KernelSpec) -> Result<CovarianceMatrix> {
    check_dims(xs.iter().map(Vec::len), spec)?;
    let mut matrix = gram(xs, |a, b| spec.k(a, b));
    for i in 0..matrix.nrows() {
        matrix[(i, i)] += spec.nugget;
    }
    let factor = Factor::new(matrix.clone(), spec.variance)?;
    for i in 0..matrix.nrows() {
        matrix[(i, i)] += factor.jitter();
    }
    Ok(CovarianceMatrix { matrix, factor })
}

pub(crate) fn check_dims(mut dims: impl Iterator<Item = usize>, spec: &KernelSpec) -> Result<()> {
    spec.validate()?;
    match dims.find(|&d| d != spec.dim()) {
        Some(d) => Err(Error::Shape {
            expected: spec.dim(),
            got: d,
        }),
        None => Ok(()),
    }
}

/// A GP over the parameter vectors of a dataset (seeds are ignored).
#[derive(Debug, Clone)]
pub struct GpModel {
    xs: Vec<Vec<f64>>,
    spec: KernelSpec,
    cond: Conditioned,
}

impl GpModel {
    pub fn new(data: &EvaluationDataset, spec: &KernelSpec) -> Result<Self> {
        let xs: Vec<Vec<f64>> = data.inputs().iter().map(|p| p.x.clone()).collect();
        let cov = build_covariance(&xs, spec)?;
        let y = DVector::from_vec(data.standardized_responses());
        let cond = if xs.is_empty() {
            Conditioned::prior()
        } else {
            Conditioned::new(cov.matrix, y, spec.variance)?
        };
        Ok(Self {
            xs,
            spec: spec.clone(),
            cond,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Predictive means and variances (including the nugget).
    pub fn predict(&self, xstar: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dims(xstar.iter().map(Vec::len), &self.spec)?;
        let k_cross = DMatrix::from_fn(self.xs.len(), xstar.len(), |i, q| {
            self.spec.k(&self.xs[i], &xstar[q])
        });
        let prior: Vec<f64> = xstar
            .iter()
            .map(|x| self.spec.k(x, x) + self.spec.nugget)
            .collect();
        Ok(self.cond.moments(&k_cross, &prior))
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.cond.log_marginal_likelihood()
    }
}

/// Posterior predictive moments at `xstar` on the standardized scale.
pub fn posterior(
    data: &EvaluationDataset,
    spec: &KernelSpec,
    xstar: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::config("posterior needs at least one training point"));
    }
    GpModel::new(data, spec)?.predict(xstar)
}

pub fn log_marginal_likelihood(data: &EvaluationDataset, spec: &KernelSpec) -> Result<f64> {
    Ok(GpModel::new(data, spec)?.log_marginal_likelihood())
}

/// True when there is nothing to learn hyperparameters from.
pub(crate) fn degenerate(xs: &[&[f64]], responses: &[f64]) -> bool {
    if xs.len() < 2 {
        return true;
    }
    let distinct: HashSet<Vec<u64>> = xs.iter().map(|x| x_key(x)).collect();
    if distinct.len() < 2 {
        return true;
    }
    let first = responses[0];
    responses.iter().all(|&y| y == first)
}

/// Multi-start maximization of the log marginal likelihood over
/// lengthscales, process variance and nugget.
pub fn fit_hyperparameters<R: Rng + ?Sized>(
    data: &EvaluationDataset,
    family: KernelFamily,
    bounds: &HyperBounds,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FitResult> {
    let dim = data
        .dim()
        .ok_or_else(|| Error::config("cannot fit hyperparameters on an empty dataset"))?;
    let xs: Vec<&[f64]> = data.inputs().iter().map(|p| p.x.as_slice()).collect();
    let fallback = fit::median_heuristic(family, &xs, dim, bounds);
    if degenerate(&xs, data.responses()) {
        return Ok(FitResult {
            spec: fallback,
            log_likelihood: None,
            warning: Some(FitWarning::DegenerateData),
        });
    }
    let layout = fit::Layout {
        dim,
        nugget: true,
        rho: false,
    };
    let best = fit::maximize(&fallback, layout, bounds, options, None, rng, |spec| {
        log_marginal_likelihood(data, spec).ok()
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
