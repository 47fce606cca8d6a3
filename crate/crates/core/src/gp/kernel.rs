use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    SquaredExponential,
    Matern52,
}

impl KernelFamily {
    /// Correlation as a function of the lengthscale-scaled distance.
    #[inline]
    pub fn correlation(self, scaled_dist_sq: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * scaled_dist_sq).exp(),
            KernelFamily::Matern52 => {
                let r = (5.0 * scaled_dist_sq).sqrt();
                (1.0 + r + r * r / 3.0) * (-r).exp()
            }
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se" | "sqexp" | "squared-exponential" | "gaussian" => Ok(Self::SquaredExponential),
            "matern52" | "matern-5/2" | "matern" => Ok(Self::Matern52),
            other => Err(Error::config(format!("unknown kernel family {other:?}"))),
        }
    }
}

/// Kernel family and hyperparameters.
///
/// `rho` is only read by the common-random-number covariance; plain GPs
/// ignore it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// One per input dimension, on the unit-cube scale.
    pub lengthscales: Vec<f64>,
    /// Process variance.
    pub variance: f64,
    /// Diagonal nugget.
    pub nugget: f64,
    /// Similarity between distinct seeds.
    pub rho: f64,
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        lengthscales: Vec<f64>,
        variance: f64,
        nugget: f64,
        rho: f64,
    ) -> Result<Self> {
        let spec = Self {
            family,
            lengthscales,
            variance,
            nugget,
            rho,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Isotropic spec with default nugget and seed similarity.
    pub fn isotropic(family: KernelFamily, dim: usize, lengthscale: f64, variance: f64) -> Self {
        Self {
            family,
            lengthscales: vec![lengthscale; dim],
            variance,
            nugget: 1e-6,
            rho: 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::config("kernel needs at least one lengthscale"));
        }
        if let Some(l) = self
            .lengthscales
            .iter()
            .find(|l| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::config(format!("lengthscale must be positive, got {l}")));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::config(format!(
                "process variance must be positive, got {}",
                self.variance
            )));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::config(format!(
                "nugget must be nonnegative, got {}",
                self.nugget
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config(format!(
                "seed similarity must lie in (0, 1), got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Parameter-space covariance `k(a, b)` (no nugget).
    #[inline]
    pub fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.lengthscales.len());
        let d2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let z = (x - y) / l;
                z * z
            })
            .sum();
        self.variance * self.family.correlation(d2)
    }
}
