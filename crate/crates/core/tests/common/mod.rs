//! Independent reference computations for the integration tests.
//!
//! Nothing here touches the library's linear algebra: systems are solved by
//! Gaussian elimination with partial pivoting on plain `Vec`s.

#![allow(dead_code)]

pub type Mat = Vec<Vec<f64>>;

/// Solves `a x = b` for each column of `b`; returns the solution columns and
/// `log|det a|`.
pub fn lu_solve(a: &Mat, b: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let mut m = a.clone();
    let mut rhs: Vec<Vec<f64>> = b.to_vec();
    let mut log_det = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for r in rhs.iter_mut() {
            r.swap(col, pivot);
        }
        let p = m[col][col];
        log_det += p.abs().ln();
        for row in col + 1..n {
            let f = m[row][col] / p;
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            for r in rhs.iter_mut() {
                r[row] -= f * r[col];
            }
        }
    }
    let sols = rhs
        .into_iter()
        .map(|mut r| {
            for row in (0..n).rev() {
                let mut s = r[row];
                for k in row + 1..n {
                    s -= m[row][k] * r[k];
                }
                r[row] = s / m[row][row];
            }
            r
        })
        .collect();
    (sols, log_det)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn se(x: &[f64], y: &[f64], ls: &[f64], var: f64) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(ls)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    var * (-0.5 * r2).exp()
}

pub fn matern52(x: &[f64], y: &[f64], ls: &[f64], var: f64) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(ls)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    let s = (5.0 * r2).sqrt();
    var * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Dense GP posterior: `k_train` already includes noise, `cross[q]` is the
/// covariance of query `q` with every training point, `prior[q]` its prior
/// variance. Returns means, variances and the log marginal likelihood.
pub fn dense_posterior(
    k_train: &Mat,
    y: &[f64],
    cross: &[Vec<f64>],
    prior: &[f64],
) -> (Vec<f64>, Vec<f64>, f64) {
    let n = y.len();
    let mut rhs = vec![y.to_vec()];
    rhs.extend(cross.iter().cloned());
    let (sols, log_det) = lu_solve(k_train, &rhs);
    let alpha = &sols[0];
    let means = cross.iter().map(|c| dot(c, alpha)).collect();
    let vars = cross
        .iter()
        .zip(&sols[1..])
        .zip(prior)
        .map(|((c, s), p)| p - dot(c, s))
        .collect();
    let lml = -0.5 * dot(y, alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    (means, vars, lml)
}

/// Sample mean and covariance of row vectors.
pub fn sample_moments(draws: &[Vec<f64>]) -> (Vec<f64>, Mat) {
    let n = draws.len() as f64;
    let q = draws[0].len();
    let mean: Vec<f64> = (0..q).map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; q]; q];
    for d in draws {
        for i in 0..q {
            for j in 0..q {
                cov[i][j] += (d[i] - mean[i]) * (d[j] - mean[j]);
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
    }
    (mean, cov)
}

/// Checks sample moments of `draws` against an analytic Gaussian with
/// `mean` and `cov`, allowing `k` standard errors per entry. Returns the
/// worst standardized deviation.
pub fn worst_z(draws: &[Vec<f64>], mean: &[f64], cov: &Mat) -> f64 {
    let n = draws.len() as f64;
    let (m, c) = sample_moments(draws);
    let q = mean.len();
    let mut worst: f64 = 0.0;
    for i in 0..q {
        let se = (cov[i][i].max(0.0) / n).sqrt().max(1e-12);
        worst = worst.max((m[i] - mean[i]).abs() / se);
        for j in 0..q {
            // Var of a sample covariance entry under normality.
            let v = (cov[i][j] * cov[i][j] + cov[i][i] * cov[j][j]) / n;
            let se = v.max(0.0).sqrt().max(1e-12);
            worst = worst.max((c[i][j] - cov[i][j]).abs() / se);
        }
    }
    worst
}
