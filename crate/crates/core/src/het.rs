//! Replicate-aggregating heteroskedastic surrogate (stochastic kriging).
//!
//! Replicates at the same parameter vector are collapsed to their mean, and
//! the GP over those means carries a per-point noise variance `s_i^2 / n_i`
//! on its diagonal instead of a shared nugget. Predictions are for the
//! latent mean surface and exclude observation noise. The seed of an
//! evaluation plays no role here.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::fit::{self, FitOptions, FitResult, FitWarning, HyperBounds};
use crate::gp::linalg::{cross_matrix, gram, mvn_draws, Conditioned};
use crate::gp::{check_dims, KernelFamily, KernelSpec};
use crate::input::{x_key, EvaluationDataset, Standardization};

/// Per-location replicate summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDesign {
    pub xs: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    /// Raw-scale group means.
    pub means: Vec<f64>,
    /// Raw-scale unbiased group variances (singletons filled by fallback).
    pub variances: Vec<f64>,
    pub standardization: Standardization,
}

impl AggregatedDesign {
    pub fn new(
        xs: Vec<Vec<f64>>,
        counts: Vec<usize>,
        means: Vec<f64>,
        variances: Vec<f64>,
        standardization: Standardization,
    ) -> Result<Self> {
        let n = xs.len();
        for len in [counts.len(), means.len(), variances.len()] {
            if len != n {
                return Err(Error::Shape {
                    expected: n,
                    got: len,
                });
            }
        }
        if counts.contains(&0) {
            return Err(Error::config("replicate counts must be at least one"));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("replicate variances must be finite and nonnegative"));
        }
        Ok(Self {
            xs,
            counts,
            means,
            variances,
            standardization,
        })
    }

    pub fn empty() -> Self {
        Self {
            xs: Vec::new(),
            counts: Vec::new(),
            means: Vec::new(),
            variances: Vec::new(),
            standardization: Standardization::IDENTITY,
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Standardized noise variance of each group mean, `s_i^2 / n_i`.
    pub fn mean_noise(&self) -> Vec<f64> {
        let s2 = self.standardization.scale * self.standardization.scale;
        self.variances
            .iter()
            .zip(&self.counts)
            .map(|(v, &n)| v / s2 / n as f64)
            .collect()
    }

    pub fn standardized_means(&self) -> Vec<f64> {
        self.means
            .iter()
            .map(|&m| self.standardization.apply(m))
            .collect()
    }
}

/// Groups responses by exact parameter vector.
///
/// Singleton groups get the mean variance of the replicated groups, or the
/// variance of all responses when nothing is replicated.
pub fn aggregate_replicates(data: &EvaluationDataset) -> AggregatedDesign {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for (p, &y) in data.inputs().iter().zip(data.responses()) {
        let g = *index.entry(x_key(&p.x)).or_insert_with(|| {
            xs.push(p.x.clone());
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(y);
    }

    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let sample_var = |g: &[f64], m: f64| {
        g.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (g.len() as f64 - 1.0)
    };

    let replicated: Vec<f64> = groups
        .iter()
        .zip(&means)
        .filter(|(g, _)| g.len() > 1)
        .map(|(g, &m)| sample_var(g, m))
        .collect();
    let fallback = if !replicated.is_empty() {
        replicated.iter().sum::<f64>() / replicated.len() as f64
    } else if data.len() > 1 {
        let all = data.responses();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        sample_var(all, m)
    } else {
        0.0
    };

    let variances = groups
        .iter()
        .zip(&means)
        .map(|(g, &m)| if g.len() > 1 { sample_var(g, m) } else { fallback })
        .collect();

    AggregatedDesign {
        xs,
        counts,
        means,
        variances,
        standardization: data.standardization(),
    }
}

/// Stochastic-kriging GP over group means.
#[derive(Debug, Clone)]
pub struct HetGp {
    xs: Vec<Vec<f64>>,
    spec: KernelSpec,
    cond: Conditioned,
}

impl HetGp {
    pub fn new(design: &AggregatedDesign, spec: &KernelSpec) -> Result<Self> {
        check_dims(design.xs.iter().map(Vec::len), spec)?;
        let cond = if design.is_empty() {
            Conditioned::prior()
        } else {
            let mut k = gram(&design.xs, |a, b| spec.k(a, b));
            for (i, noise) in design.mean_noise().into_iter().enumerate() {
                k[(i, i)] += noise;
            }
            let y = DVector::from_vec(design.standardized_means());
            Conditioned::new(k, y, spec.variance)?
        };
        Ok(Self {
            xs: design.xs.clone(),
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

    /// Latent-mean predictive moments on the standardized scale.
    pub fn predict(&self, xstar: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dims(xstar.iter().map(Vec::len), &self.spec)?;
        let k_cross = cross_matrix(&self.xs, xstar, |a, b| self.spec.k(a, b));
        let prior: Vec<f64> = xstar.iter().map(|x| self.spec.k(x, x)).collect();
        Ok(self.cond.moments(&k_cross, &prior))
    }

    pub fn predictive_covariance(&self, xstar: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_dims(xstar.iter().map(Vec::len), &self.spec)?;
        let k_cross = cross_matrix(&self.xs, xstar, |a, b| self.spec.k(a, b));
        let k_qq = gram(xstar, |a, b| self.spec.k(a, b));
        Ok((self.cond.mean(&k_cross), self.cond.covariance(&k_cross, k_qq)))
    }

    /// Joint draws of the latent mean over `xgrid` via a dense Cholesky.
    pub fn joint_sample<R: Rng + ?Sized>(
        &self,
        xgrid: &[Vec<f64>],
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let (mean, cov) = self.predictive_covariance(xgrid)?;
        mvn_draws(&mean, cov, count, rng)
    }
}

pub fn het_posterior(
    design: &AggregatedDesign,
    spec: &KernelSpec,
    xstar: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    HetGp::new(design, spec)?.predict(xstar)
}

pub fn het_joint_sample<R: Rng + ?Sized>(
    design: &AggregatedDesign,
    spec: &KernelSpec,
    xgrid: &[Vec<f64>],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    HetGp::new(design, spec)?.joint_sample(xgrid, count, rng)
}

/// Fits lengthscales and process variance; the noise comes from the
/// replicates.
pub fn fit_het_hyperparameters<R: Rng + ?Sized>(
    design: &AggregatedDesign,
    family: KernelFamily,
    bounds: &HyperBounds,
    options: &FitOptions,
    warm: Option<&KernelSpec>,
    rng: &mut R,
) -> Result<FitResult> {
    let dim = design
        .xs
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::config("cannot fit hyperparameters on an empty design"))?;
    let xs: Vec<&[f64]> = design.xs.iter().map(Vec::as_slice).collect();
    let fallback = fit::median_heuristic(family, &xs, dim, bounds);
    let first = design.means[0];
    if design.len() < 2 || design.means.iter().all(|&m| m == first) {
        return Ok(FitResult {
            spec: warm.cloned().unwrap_or(fallback),
            log_likelihood: None,
            warning: Some(FitWarning::DegenerateData),
        });
    }
    let layout = fit::Layout {
        dim,
        nugget: false,
        rho: false,
    };
    let best = fit::maximize(&fallback, layout, bounds, options, warm, rng, |spec| {
        HetGp::new(design, spec)
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
