//! Cholesky factorization with jitter escalation and the conditioning
//! algebra shared by every surrogate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative jitter ladder: 0, then 1e-8 up to 1e-4 of the variance scale.
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of a covariance matrix plus the jitter that was needed.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Factors `m`, adding `jitter * I` with escalating jitter if needed.
    pub fn new(m: DMatrix<f64>, variance_scale: f64) -> Result<Self> {
        let scale = if variance_scale > 0.0 {
            variance_scale
        } else {
            1.0
        };
        if let Some(chol) = try_cholesky(&m) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * scale;
            let mut jm = m.clone();
            for i in 0..jm.nrows() {
                jm[(i, i)] += jitter;
            }
            if let Some(chol) = try_cholesky(&jm) {
                return Ok(Self { chol, jitter });
            }
            rel *= 10.0;
        }
        Err(Error::numerical(format!(
            "{}x{} covariance not positive definite after jitter {:e}",
            m.nrows(),
            m.ncols(),
            JITTER_MAX * scale
        )))
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} B`.
    pub fn whiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky diagonal is positive")
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `L z` for a standard-normal vector `z`.
    pub fn correlate(&self, z: &DVector<f64>) -> DVector<f64> {
        self.chol.l_dirty().lower_triangle() * z
    }
}

fn try_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    (0..l.nrows())
        .all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0)
        .then_some(chol)
}

/// Dense matrix `[f(a_i, b_j)]`.
pub fn cross_matrix<P, F>(a: &[P], b: &[P], f: F) -> DMatrix<f64>
where
    F: Fn(&P, &P) -> f64,
{
    DMatrix::from_fn(a.len(), b.len(), |i, j| f(&a[i], &b[j]))
}

/// Symmetric matrix `[f(a_i, a_j)]`, filled from the lower triangle so it is
/// exactly symmetric.
pub fn gram<P, F>(a: &[P], f: F) -> DMatrix<f64>
where
    F: Fn(&P, &P) -> f64,
{
    let n = a.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = f(&a[i], &a[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// A zero-mean GP conditioned on (standardized) training responses.
///
/// `factor` is the Cholesky factor of the training covariance including
/// noise; with no training data every query reverts to the prior.
#[derive(Debug, Clone)]
pub struct Conditioned {
    factor: Option<Factor>,
    alpha: DVector<f64>,
    y: DVector<f64>,
}

impl Conditioned {
    pub fn new(k_train: DMatrix<f64>, y: DVector<f64>, variance_scale: f64) -> Result<Self> {
        if k_train.nrows() != y.len() {
            return Err(Error::Shape {
                expected: k_train.nrows(),
                got: y.len(),
            });
        }
        if y.is_empty() {
            return Ok(Self::prior());
        }
        let factor = Factor::new(k_train, variance_scale)?;
        let alpha = factor.solve(&y);
        Ok(Self {
            factor: Some(factor),
            alpha,
            y,
        })
    }

    pub fn prior() -> Self {
        Self {
            factor: None,
            alpha: DVector::zeros(0),
            y: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn factor(&self) -> Option<&Factor> {
        self.factor.as_ref()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.factor.as_ref().map_or(0.0, Factor::jitter)
    }

    /// Posterior means and variances given `k_cross` (N x Q) and the prior
    /// variances at the queries. Variances are clamped at zero.
    pub fn moments(&self, k_cross: &DMatrix<f64>, prior_diag: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let Some(factor) = &self.factor else {
            return (vec![0.0; prior_diag.len()], prior_diag.to_vec());
        };
        let means = (k_cross.transpose() * &self.alpha).iter().copied().collect();
        let v = factor.whiten(k_cross);
        let vars = prior_diag
            .iter()
            .enumerate()
            .map(|(q, &p)| (p - v.column(q).norm_squared()).max(0.0))
            .collect();
        (means, vars)
    }

    /// Posterior mean vector over the queries.
    pub fn mean(&self, k_cross: &DMatrix<f64>) -> DVector<f64> {
        if self.factor.is_none() {
            return DVector::zeros(k_cross.ncols());
        }
        k_cross.transpose() * &self.alpha
    }

    /// Posterior covariance `K_qq - K_qN K^{-1} K_Nq`.
    pub fn covariance(&self, k_cross: &DMatrix<f64>, k_qq: DMatrix<f64>) -> DMatrix<f64> {
        let Some(factor) = &self.factor else {
            return k_qq;
        };
        let v = factor.whiten(k_cross);
        let mut c = k_qq - v.transpose() * &v;
        // Restore exact symmetry lost to round-off.
        let n = c.nrows();
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (c[(i, j)] + c[(j, i)]);
                c[(i, j)] = s;
                c[(j, i)] = s;
            }
        }
        c
    }

    /// `-1/2 y^T K^{-1} y - 1/2 log|K| - n/2 log(2 pi)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(factor) = &self.factor else {
            return 0.0;
        };
        let n = self.y.len() as f64;
        -0.5 * self.y.dot(&self.alpha)
            - 0.5 * factor.log_det()
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// `J` draws from `N(mean, cov)`.
///
/// Uses a Cholesky factor when `cov` is positive definite and otherwise a
/// square root from the eigendecomposition with negative eigenvalues
/// clamped to zero, so rank-deficient posteriors (for example at noise-free
/// training points) are sampled without added jitter.
pub fn mvn_draws<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: DMatrix<f64>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let m = mean.len();
    if cov.nrows() != m || cov.ncols() != m {
        return Err(Error::Shape {
            expected: m,
            got: cov.nrows(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite predictive covariance"));
    }
    let root = match try_cholesky(&cov) {
        Some(chol) => chol.l(),
        None => {
            let eig = cov.symmetric_eigen();
            let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
        }
    };
    let z = DMatrix::from_fn(m, count, |_, _| rng.sample::<f64, _>(StandardNormal));
    let draws = root * z;
    Ok((0..count)
        .map(|j| (0..m).map(|i| mean[i] + draws[(i, j)]).collect())
        .collect())
}
