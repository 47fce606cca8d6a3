//! Trajectory-level Bayesian optimization for stochastic simulators.
//!
//! The search space is augmented with the simulator seed, so the optimizer
//! looks for individual realizations that match observed data rather than
//! parameters whose average behavior does. The main pieces:
//!
//! - [`sim`]: seeded simulators (a binomial-chain SIR model and a
//!   child-process plugin bridge).
//! - [`gp`] and [`crngp`]: Gaussian-process surrogates, the latter with a
//!   seed-similarity kernel for common random numbers.
//! - [`het`]: a replicate-mean surrogate used by the comparison methods.
//! - [`grid`]: adaptive candidate grids (resampling and random-walk
//!   densification).
//! - [`ts`]: the batch Thompson-sampling loop.
//! - [`metrics`]: discrepancies and trajectory-quality summaries.

pub mod crngp;
pub mod error;
pub mod gp;
pub mod grid;
pub mod het;
pub mod input;
pub mod metrics;
pub mod sim;
pub mod ts;

pub use error::{Error, Result};
pub use input::{AugmentedInput, EvaluationDataset, SeedSet, Standardization, FRESH_SEED};
pub use sim::{Simulator, SirConfig, SirSimulator, Trajectory};
pub use ts::{run_ts, Method, OptimizationTrace, TsConfig};
