//! Seeded simulators.
//!
//! A [`Simulator`] maps a raw parameter vector and an integer seed to a
//! [`Trajectory`]. The same `(params, seed)` pair must always produce the
//! same trajectory: seeds are search coordinates, not a source of noise.
//!
//! Two implementations ship with the crate: the discrete-time binomial
//! chain SIR model ([`SirSimulator`]) and a child-process bridge
//! ([`PluginSimulator`]) speaking a one-line JSON protocol.

mod plugin;
mod sir;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use plugin::{external_simulate, PluginHandle, PluginRequest, PluginResponse, PluginSimulator};
pub use sir::{simulate_sir, SirConfig, SirSimulator};

/// The `(params, seed)` pair that produced a trajectory. Parameters are on
/// the simulator's own (raw) scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub params: Vec<f64>,
    pub seed: u64,
}

/// One realization of a stochastic simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<i64>,
    pub outputs: BTreeMap<String, Vec<f64>>,
    pub provenance: Option<Provenance>,
}

impl Trajectory {
    /// Looks up a named output series.
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.outputs.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// A deterministic-given-seed simulator.
pub trait Simulator: Send + Sync {
    /// Number of parameters the simulator expects.
    fn dim(&self) -> usize;

    fn simulate(&self, params: &[f64], seed: u64) -> Result<Trajectory>;
}

impl<S: Simulator + ?Sized> Simulator for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn simulate(&self, params: &[f64], seed: u64) -> Result<Trajectory> {
        (**self).simulate(params, seed)
    }
}
