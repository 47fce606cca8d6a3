//! Trajectory-quality metrics.
//!
//! A trajectory is "below threshold" when its discrepancy is strictly less
//! than the threshold. `QT_t` counts below-threshold trajectories among the
//! first `t` evaluations, and rAUC is the trapezoidal area under `QT`
//! normalized by `Nmax^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ts::OptimizationTrace;

/// Thresholds used for SIR trajectory quality.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [15.0, 20.0, 25.0, 30.0];

/// Root mean squared pointwise difference.
pub fn rmse(sim: &[f64], obs: &[f64]) -> Result<f64> {
    if sim.len() != obs.len() {
        return Err(Error::Shape {
            expected: obs.len(),
            got: sim.len(),
        });
    }
    if sim.is_empty() {
        return Err(Error::config("rmse of empty series"));
    }
    let ss: f64 = sim.iter().zip(obs).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / sim.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualObjective {
    pub value: f64,
    /// Time points skipped because the observed value was not positive.
    pub excluded: usize,
}

/// Sum of observation-normalized absolute errors over two output series.
///
/// Terms whose observed value is zero (or negative) are skipped and counted
/// in [`DualObjective::excluded`].
pub fn dual_objective(
    sim_first: &[f64],
    sim_second: &[f64],
    obs_first: &[f64],
    obs_second: &[f64],
) -> Result<DualObjective> {
    for (sim, obs) in [(sim_first, obs_first), (sim_second, obs_second)] {
        if sim.len() != obs.len() {
            return Err(Error::Shape {
                expected: obs.len(),
                got: sim.len(),
            });
        }
    }
    let mut value = 0.0;
    let mut excluded = 0;
    for (sim, obs) in [(sim_first, obs_first), (sim_second, obs_second)] {
        for (s, o) in sim.iter().zip(obs) {
            if *o > 0.0 {
                value += (o - s).abs() / o;
            } else {
                excluded += 1;
            }
        }
    }
    Ok(DualObjective { value, excluded })
}

/// `QT_1 ..= QT_nmax`; evaluations past the end of `discrepancies` add
/// nothing, and entries past `nmax` are ignored.
pub fn quality_curve(discrepancies: &[f64], threshold: f64, nmax: usize) -> Vec<usize> {
    let mut count = 0;
    (0..nmax)
        .map(|t| {
            if discrepancies.get(t).is_some_and(|&d| d < threshold) {
                count += 1;
            }
            count
        })
        .collect()
}

/// Trapezoidal area under `QT` from `t = 1` to `nmax`, divided by `nmax^2`.
pub fn rauc_from_curve(curve: &[usize]) -> f64 {
    let nmax = curve.len();
    if nmax == 0 {
        return 0.0;
    }
    let area: f64 = curve
        .windows(2)
        .map(|w| (w[0] + w[1]) as f64 / 2.0)
        .sum();
    area / (nmax as f64 * nmax as f64)
}

pub fn rauc_from_discrepancies(discrepancies: &[f64], threshold: f64, nmax: usize) -> f64 {
    rauc_from_curve(&quality_curve(discrepancies, threshold, nmax))
}

pub fn rauc(trace: &OptimizationTrace, threshold: f64) -> f64 {
    rauc_from_discrepancies(&trace.discrepancies(), threshold, trace.nmax)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub nmax: usize,
    pub thresholds: Vec<f64>,
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
    pub rauc: Vec<f64>,
    pub curves: Vec<Vec<usize>>,
}

impl QualityReport {
    pub fn from_discrepancies(discrepancies: &[f64], thresholds: &[f64], nmax: usize) -> Self {
        let curves: Vec<Vec<usize>> = thresholds
            .iter()
            .map(|&th| quality_curve(discrepancies, th, nmax))
            .collect();
        let counts: Vec<usize> = curves.iter().map(|c| c.last().copied().unwrap_or(0)).collect();
        let proportions = counts
            .iter()
            .map(|&c| if nmax == 0 { 0.0 } else { c as f64 / nmax as f64 })
            .collect();
        let rauc = curves.iter().map(|c| rauc_from_curve(c)).collect();
        Self {
            nmax,
            thresholds: thresholds.to_vec(),
            counts,
            proportions,
            rauc,
            curves,
        }
    }
}

/// Below-threshold counts, proportions of `Nmax` and rAUC for each threshold.
pub fn threshold_counts(trace: &OptimizationTrace, thresholds: &[f64]) -> QualityReport {
    QualityReport::from_discrepancies(&trace.discrepancies(), thresholds, trace.nmax)
}
