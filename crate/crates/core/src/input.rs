//! Search points and training data.

use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved seed id standing for "a replicate not seen in training".
///
/// Predicting at this id gives every training point the cross-seed
/// covariance, which is how the CRN surrogate averages over seeds.
pub const FRESH_SEED: u64 = u64::MAX;

/// A `(parameter vector, seed)` pair with the parameters on the unit cube.
///
/// Equality and hashing are exact: two inputs are the same search point only
/// if every coordinate has the same bit pattern and the seeds match.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentedInput {
    pub x: Vec<f64>,
    pub r: u64,
}

impl AugmentedInput {
    pub fn new(x: Vec<f64>, r: u64) -> Self {
        Self { x, r }
    }

    /// The same parameters paired with [`FRESH_SEED`].
    pub fn fresh(x: Vec<f64>) -> Self {
        Self { x, r: FRESH_SEED }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn same_x(&self, other: &AugmentedInput) -> bool {
        x_key(&self.x) == x_key(&other.x)
    }
}

impl PartialEq for AugmentedInput {
    fn eq(&self, other: &Self) -> bool {
        self.r == other.r && x_key(&self.x) == x_key(&other.x)
    }
}

impl Eq for AugmentedInput {}

impl Hash for AugmentedInput {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.r.hash(state);
        x_key(&self.x).hash(state);
    }
}

/// Bit-exact key for a parameter vector, usable in hash maps.
pub fn x_key(x: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 compare equal as floats; fold them so the key agrees.
    x.iter()
        .map(|&v| if v == 0.0 { 0u64 } else { v.to_bits() })
        .collect()
}

/// The fixed, ordered set of replicate seeds used by fixed-seed methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    seeds: Vec<u64>,
}

impl SeedSet {
    pub fn new(seeds: Vec<u64>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::config("seed set must contain at least one seed"));
        }
        let mut seen = HashSet::new();
        for &s in &seeds {
            if s == FRESH_SEED {
                return Err(Error::config("seed id u64::MAX is reserved"));
            }
            if !seen.insert(s) {
                return Err(Error::config(format!("duplicate seed {s} in seed set")));
            }
        }
        Ok(Self { seeds })
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn contains(&self, seed: u64) -> bool {
        self.seeds.contains(&seed)
    }

    pub fn index_of(&self, seed: u64) -> Option<usize> {
        self.seeds.iter().position(|&s| s == seed)
    }
}

/// Affine map applied to responses before fitting so the GP can assume a
/// zero prior mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization {
        mean: 0.0,
        scale: 1.0,
    };

    /// Sample mean and standard deviation; a zero or undefined spread maps
    /// to scale 1.
    pub fn from_responses(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::IDENTITY;
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        if y.len() < 2 {
            return Self { mean, scale: 1.0 };
        }
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        let scale = if sd.is_finite() && sd > 0.0 { sd } else { 1.0 };
        Self { mean, scale }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    pub fn invert_mean(&self, z: f64) -> f64 {
        self.mean + self.scale * z
    }

    pub fn invert_variance(&self, v: f64) -> f64 {
        v * self.scale * self.scale
    }
}

/// Evaluated inputs with their scalar discrepancies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationDataset {
    inputs: Vec<AugmentedInput>,
    responses: Vec<f64>,
    standardization: Standardization,
}

impl EvaluationDataset {
    /// Builds a dataset standardized by its own response mean and spread.
    pub fn new(inputs: Vec<AugmentedInput>, responses: Vec<f64>) -> Result<Self> {
        let std = Standardization::from_responses(&responses);
        Self::with_standardization(inputs, responses, std)
    }

    pub fn with_standardization(
        inputs: Vec<AugmentedInput>,
        responses: Vec<f64>,
        standardization: Standardization,
    ) -> Result<Self> {
        if inputs.len() != responses.len() {
            return Err(Error::Shape {
                expected: inputs.len(),
                got: responses.len(),
            });
        }
        if !(standardization.scale > 0.0 && standardization.scale.is_finite()) {
            return Err(Error::config("standardization scale must be positive"));
        }
        if let Some(bad) = responses.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("non-finite response {bad}")));
        }
        if let Some(first) = inputs.first() {
            let d = first.dim();
            if let Some(p) = inputs.iter().find(|p| p.dim() != d) {
                return Err(Error::Shape {
                    expected: d,
                    got: p.dim(),
                });
            }
        }
        let mut seen = HashSet::with_capacity(inputs.len());
        for p in &inputs {
            if !seen.insert(p) {
                return Err(Error::config(format!("duplicate input {p:?} in dataset")));
            }
        }
        Ok(Self {
            inputs,
            responses,
            standardization,
        })
    }

    pub fn empty() -> Self {
        Self {
            inputs: Vec::new(),
            responses: Vec::new(),
            standardization: Standardization::IDENTITY,
        }
    }

    pub fn inputs(&self) -> &[AugmentedInput] {
        &self.inputs
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn standardized_responses(&self) -> Vec<f64> {
        self.responses
            .iter()
            .map(|&y| self.standardization.apply(y))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.inputs.first().map(AugmentedInput::dim)
    }
}
