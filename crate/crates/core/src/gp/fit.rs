//! Marginal-likelihood hyperparameter search.
//!
//! Free hyperparameters are searched in log space inside their bounds. Each
//! bounded log-coordinate is reached through a logistic map from an
//! unconstrained coordinate, so a plain Nelder-Mead simplex can run without
//! handling constraints. Several starts are drawn from a Latin hypercube over
//! the box; the best result wins.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelFamily, KernelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub lengthscale: (f64, f64),
    pub variance: (f64, f64),
    pub nugget: (f64, f64),
    pub rho: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            lengthscale: (0.01, 2.0),
            variance: (0.01, 100.0),
            nugget: (1e-8, 1.0),
            rho: (0.05, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub starts: usize,
    /// Objective evaluations per start.
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            max_evals: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitWarning {
    /// Too few points or no response spread; nothing to fit.
    DegenerateData,
    /// Every start produced a non-finite objective.
    AllStartsFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: KernelSpec,
    /// Log marginal likelihood at `spec`; `None` for fallback specs.
    pub log_likelihood: Option<f64>,
    pub warning: Option<FitWarning>,
}

/// Which hyperparameters a model exposes to the search.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub dim: usize,
    pub nugget: bool,
    pub rho: bool,
}

impl Layout {
    fn bounds(&self, b: &HyperBounds) -> Vec<(f64, f64)> {
        let mut out = vec![b.lengthscale; self.dim];
        out.push(b.variance);
        if self.nugget {
            out.push(b.nugget);
        }
        if self.rho {
            out.push(b.rho);
        }
        out
    }

    fn pack(&self, spec: &KernelSpec) -> Vec<f64> {
        let mut out = spec.lengthscales.clone();
        out.push(spec.variance);
        if self.nugget {
            out.push(spec.nugget);
        }
        if self.rho {
            out.push(spec.rho);
        }
        out
    }

    fn unpack(&self, template: &KernelSpec, values: &[f64]) -> KernelSpec {
        let mut spec = template.clone();
        spec.lengthscales = values[..self.dim].to_vec();
        spec.variance = values[self.dim];
        let mut k = self.dim + 1;
        if self.nugget {
            spec.nugget = values[k];
            k += 1;
        }
        if self.rho {
            spec.rho = values[k];
        }
        spec
    }
}

/// Median pairwise per-dimension distance, clamped into the lengthscale
/// bounds, with unit variance.
pub(crate) fn median_heuristic(
    family: KernelFamily,
    xs: &[&[f64]],
    dim: usize,
    bounds: &HyperBounds,
) -> KernelSpec {
    let (lo, hi) = bounds.lengthscale;
    let lengthscales = (0..dim)
        .map(|k| {
            let mut dists: Vec<f64> = Vec::new();
            for i in 0..xs.len() {
                for j in 0..i {
                    let d = (xs[i][k] - xs[j][k]).abs();
                    if d > 0.0 {
                        dists.push(d);
                    }
                }
            }
            let med = if dists.is_empty() {
                0.5
            } else {
                dists.sort_by(f64::total_cmp);
                dists[dists.len() / 2]
            };
            med.clamp(lo, hi)
        })
        .collect();
    KernelSpec {
        family,
        lengthscales,
        variance: 1.0f64.clamp(bounds.variance.0, bounds.variance.1),
        nugget: 1e-4f64.clamp(bounds.nugget.0, bounds.nugget.1),
        rho: 0.5f64.clamp(bounds.rho.0, bounds.rho.1),
    }
}

/// Maximizes `objective` over the free hyperparameters of `template`.
///
/// `warm` replaces the first space-filling start when given. Returns `None`
/// when no start produced a finite objective.
pub(crate) fn maximize<R, F>(
    template: &KernelSpec,
    layout: Layout,
    bounds: &HyperBounds,
    options: &FitOptions,
    warm: Option<&KernelSpec>,
    rng: &mut R,
    objective: F,
) -> Option<(KernelSpec, f64)>
where
    R: Rng + ?Sized,
    F: Fn(&KernelSpec) -> Option<f64>,
{
    let boxes: Vec<(f64, f64)> = layout
        .bounds(bounds)
        .into_iter()
        .map(|(lo, hi)| (lo.ln(), hi.ln()))
        .collect();
    let free: Vec<usize> = (0..boxes.len())
        .filter(|&i| boxes[i].1 > boxes[i].0)
        .collect();

    let to_values = |u: &[f64]| -> Vec<f64> {
        let mut vals: Vec<f64> = boxes.iter().map(|(lo, _)| lo.exp()).collect();
        for (k, &i) in free.iter().enumerate() {
            let (lo, hi) = boxes[i];
            vals[i] = (lo + (hi - lo) * sigmoid(u[k])).exp();
        }
        vals
    };
    let eval = |u: &[f64]| -> f64 {
        let spec = layout.unpack(template, &to_values(u));
        match objective(&spec) {
            Some(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };

    if free.is_empty() {
        let spec = layout.unpack(template, &to_values(&[]));
        let v = objective(&spec)?;
        return v.is_finite().then_some((spec, v));
    }

    let starts = latin_starts(options.starts.max(1), free.len(), rng);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (s, mut u0) in starts.into_iter().enumerate() {
        if s == 0 {
            if let Some(w) = warm {
                let packed = layout.pack(w);
                u0 = free
                    .iter()
                    .map(|&i| {
                        let (lo, hi) = boxes[i];
                        let p = ((packed[i].ln() - lo) / (hi - lo)).clamp(1e-3, 1.0 - 1e-3);
                        logit(p)
                    })
                    .collect();
            }
        }
        let (u, f) = nelder_mead(&eval, u0, options.max_evals);
        if f.is_finite() && best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((u, f));
        }
    }
    let (u, f) = best?;
    Some((layout.unpack(template, &to_values(&u)), -f))
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Latin-hypercube starts in the logistic coordinates, kept away from the
/// box edges.
fn latin_starts<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = (0..dim)
        .map(|_| {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(rng);
            strata
                .into_iter()
                .map(|s| {
                    let p = (s as f64 + rng.random::<f64>()) / n as f64;
                    logit(0.1 + 0.8 * p)
                })
                .collect()
        })
        .collect();
    (0..n)
        .map(|i| cols.iter_mut().map(|c| c[i]).collect())
        .collect()
}

/// Minimizes `f` from `x0`; returns the best vertex and its value.
pub(crate) fn nelder_mead<F>(f: &F, x0: Vec<f64>, max_evals: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let call = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = call(&x0, &mut evals);
    simplex.push((x0.clone(), f0));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += 1.0;
        let fx = call(&x, &mut evals);
        simplex.push((x, fx));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fbest, fworst) = (simplex[0].1, simplex[n].1);
        if fworst.is_finite() && (fworst - fbest).abs() <= 1e-8 * (1.0 + fbest.abs()) {
            let spread = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0f64, f64::max);
            if spread < 1e-5 {
                break;
            }
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = call(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = call(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5);
                let fc = call(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = call(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    let fx = call(&x, &mut evals);
                    *vertex = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2);
        let (x, fx) = nelder_mead(&f, vec![0.0, 0.0], 500);
        assert!(fx < 1e-8, "{fx}");
        assert!((x[0] - 1.5).abs() < 1e-4 && (x[1] + 0.5).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_handles_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, _) = nelder_mead(&f, vec![-1.2, 1.0], 2000);
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn median_heuristic_respects_bounds() {
        let pts = [[0.0, 0.0], [0.001, 0.5], [0.002, 1.0]];
        let xs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let spec = median_heuristic(KernelFamily::Matern52, &xs, 2, &HyperBounds::default());
        assert_eq!(spec.lengthscales[0], 0.01);
        assert!((spec.lengthscales[1] - 0.5).abs() < 1e-12);
    }
}
