//! Discrete-time stochastic SIR model with binomial transitions.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{Provenance, Simulator, Trajectory};
use crate::error::{Error, Result};

/// Population, initial state, horizon, rates and seed of one SIR run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirConfig {
    pub population: u64,
    pub s0: u64,
    pub i0: u64,
    pub r0: u64,
    /// Number of unit time steps; the trajectory has `horizon + 1` entries.
    pub horizon: u32,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SirConfig {
    fn default() -> Self {
        Self {
            population: 1010,
            s0: 1000,
            i0: 10,
            r0: 0,
            horizon: 100,
            beta: 0.04,
            gamma: 0.425,
            seed: 0,
        }
    }
}

impl SirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s0 + self.i0 + self.r0 != self.population {
            return Err(Error::config(format!(
                "S0 + I0 + R0 = {} does not equal N = {}",
                self.s0 + self.i0 + self.r0,
                self.population
            )));
        }
        if self.population == 0 {
            return Err(Error::config("population must be positive"));
        }
        if self.horizon < 1 {
            return Err(Error::config("horizon must be at least one step"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Runs the binomial chain
///
/// ```text
/// X_t ~ Binom(S_t, 1 - exp(-beta * I_t / N))
/// Y_t ~ Binom(I_t, 1 - exp(-gamma))
/// S_{t+1} = S_t - X_t,  I_{t+1} = I_t + X_t - Y_t,  R_{t+1} = R_t + Y_t
/// ```
///
/// All draws come from a ChaCha8 stream keyed on `config.seed` alone, with
/// `X_t` drawn before `Y_t` at every step.
pub fn simulate_sir(config: &SirConfig) -> Result<Trajectory> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.population as f64;
    let p_recover = -(-config.gamma).exp_m1();

    let steps = config.horizon as usize + 1;
    let mut s_series = Vec::with_capacity(steps);
    let mut i_series = Vec::with_capacity(steps);
    let mut r_series = Vec::with_capacity(steps);

    let (mut s, mut i, mut r) = (config.s0, config.i0, config.r0);
    s_series.push(s as f64);
    i_series.push(i as f64);
    r_series.push(r as f64);

    for _ in 0..config.horizon {
        let p_infect = -(-config.beta * i as f64 / n).exp_m1();
        let x = binomial(s, p_infect, &mut rng)?;
        let y = binomial(i, p_recover, &mut rng)?;
        s -= x;
        i = i + x - y;
        r += y;
        s_series.push(s as f64);
        i_series.push(i as f64);
        r_series.push(r as f64);
    }

    let mut outputs = BTreeMap::new();
    outputs.insert("S".to_string(), s_series);
    outputs.insert("I".to_string(), i_series);
    outputs.insert("R".to_string(), r_series);
    Ok(Trajectory {
        times: (0..steps as i64).collect(),
        outputs,
        provenance: Some(Provenance {
            params: vec![config.beta, config.gamma],
            seed: config.seed,
        }),
    })
}

fn binomial(n: u64, p: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    if n == 0 || p <= 0.0 {
        return Ok(0);
    }
    let dist = Binomial::new(n, p.min(1.0))
        .map_err(|e| Error::numerical(format!("binomial({n}, {p}): {e}")))?;
    Ok(dist.sample(rng))
}

/// [`Simulator`] adapter over [`simulate_sir`] with parameters `[beta, gamma]`.
#[derive(Debug, Clone, Default)]
pub struct SirSimulator {
    pub base: SirConfig,
}

impl SirSimulator {
    pub fn new(base: SirConfig) -> Self {
        Self { base }
    }

    pub fn config_for(&self, params: &[f64], seed: u64) -> Result<SirConfig> {
        if params.len() != 2 {
            return Err(Error::Shape {
                expected: 2,
                got: params.len(),
            });
        }
        Ok(SirConfig {
            beta: params[0],
            gamma: params[1],
            seed,
            ..self.base.clone()
        })
    }
}

impl Simulator for SirSimulator {
    fn dim(&self) -> usize {
        2
    }

    fn simulate(&self, params: &[f64], seed: u64) -> Result<Trajectory> {
        simulate_sir(&self.config_for(params, seed)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(beta: f64, gamma: f64, seed: u64) -> Trajectory {
        simulate_sir(&SirConfig {
            beta,
            gamma,
            seed,
            ..SirConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn conserves_population_at_default_rates() {
        let traj = run(0.04, 0.425, 7);
        assert_eq!(traj.len(), 101);
        let (s, i, r) = (
            traj.series("S").unwrap(),
            traj.series("I").unwrap(),
            traj.series("R").unwrap(),
        );
        for t in 0..traj.len() {
            assert_eq!(s[t] + i[t] + r[t], 1010.0);
        }
    }

    #[test]
    fn zero_beta_freezes_susceptibles() {
        let traj = run(0.0, 0.3, 11);
        assert!(traj.series("S").unwrap().iter().all(|&s| s == 1000.0));
        let i = traj.series("I").unwrap();
        assert!(i.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_gamma_never_recovers() {
        let traj = run(0.5, 0.0, 3);
        assert!(traj.series("R").unwrap().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn same_seed_same_trajectory() {
        assert_eq!(run(0.7, 0.2, 50), run(0.7, 0.2, 50));
        assert_ne!(run(0.7, 0.2, 50).outputs, run(0.7, 0.2, 51).outputs);
    }

    #[test]
    fn rejects_inconsistent_population() {
        let cfg = SirConfig {
            s0: 999,
            ..SirConfig::default()
        };
        assert!(matches!(simulate_sir(&cfg), Err(Error::Config(_))));
        let cfg = SirConfig {
            beta: -0.1,
            ..SirConfig::default()
        };
        assert!(matches!(simulate_sir(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn adapter_checks_dimension() {
        let sim = SirSimulator::default();
        assert!(matches!(sim.simulate(&[0.1], 1), Err(Error::Shape { .. })));
    }
}
