//! Batch Thompson sampling over a finite candidate grid.
//!
//! Each iteration draws `J` joint samples of the discrepancy surface from
//! the surrogate, takes the (unevaluated) minimizer of each draw, runs the
//! simulator at the chosen points and refits. Five variants differ in the
//! surrogate and in how the candidate grid evolves; see [`Method`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crngp::{fit_crn_hyperparameters, CrnGp, SampleOptions};
use crate::error::{Error, Result};
use crate::gp::{FitOptions, FitWarning, HyperBounds, KernelFamily, KernelSpec};
use crate::grid::{
    densify, filter_grid, latin_hypercube, lhs_grid, log_likelihood, relative_sigma_obs,
    CandidateGrid, CandidateSampler, ProposalSpec,
};
use crate::het::{aggregate_replicates, fit_het_hyperparameters, HetGp};
use crate::input::{AugmentedInput, EvaluationDataset, SeedSet, Standardization};
use crate::metrics::{dual_objective, rmse};
use crate::sim::{Simulator, Trajectory};

/// Seeds are drawn from `0..SEED_RANGE`.
const SEED_RANGE: u64 = 1 << 31;

/// Optimizer variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// CRN surrogate, adaptive grid, fixed seed set.
    ACrn,
    /// CRN surrogate, fixed grid, fixed seed set.
    FCrn,
    /// CRN surrogate, fixed parameter grid; a grid point moves on to new
    /// seeds once it has used every seed in the set.
    FgCrn,
    /// Replicate-mean surrogate, adaptive grid over parameters, random seeds.
    AHet,
    /// Replicate-mean surrogate, fixed parameter grid, random seeds.
    FHet,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ACrn,
        Method::FCrn,
        Method::FgCrn,
        Method::AHet,
        Method::FHet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ACrn => "aCRN",
            Method::FCrn => "fCRN",
            Method::FgCrn => "fgCRN",
            Method::AHet => "aHet",
            Method::FHet => "fHet",
        }
    }

    pub fn uses_crn(self) -> bool {
        matches!(self, Method::ACrn | Method::FCrn | Method::FgCrn)
    }

    pub fn adaptive(self) -> bool {
        matches!(self, Method::ACrn | Method::AHet)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

/// How the filtering/acceptance noise scale is chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaObsRule {
    /// `max(fraction * sd(observed discrepancies), floor)`.
    Relative { fraction: f64, floor: f64 },
    Fixed(f64),
}

impl Default for SigmaObsRule {
    fn default() -> Self {
        SigmaObsRule::Relative {
            fraction: 0.1,
            floor: 1e-6,
        }
    }
}

impl SigmaObsRule {
    pub fn value(&self, discrepancies: &[f64]) -> f64 {
        match *self {
            SigmaObsRule::Relative { fraction, floor } => {
                relative_sigma_obs(discrepancies, fraction, floor)
            }
            SigmaObsRule::Fixed(s) => s,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SigmaObsRule::Relative { fraction, floor } => fraction > 0.0 && floor > 0.0,
            SigmaObsRule::Fixed(s) => s > 0.0 && s.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("sigma_obs rule must be positive"))
        }
    }
}

/// Scalar mismatch between a simulated and the observed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Discrepancy {
    Rmse { series: String },
    DualObjective { first: String, second: String },
}

impl Default for Discrepancy {
    fn default() -> Self {
        Discrepancy::Rmse {
            series: "I".to_string(),
        }
    }
}

impl Discrepancy {
    fn series_names(&self) -> Vec<&str> {
        match self {
            Discrepancy::Rmse { series } => vec![series],
            Discrepancy::DualObjective { first, second } => vec![first, second],
        }
    }

    /// Returns the value and the number of skipped observations.
    pub fn evaluate(&self, sim: &Trajectory, obs: &Trajectory) -> Result<(f64, usize)> {
        let get = |t: &Trajectory, name: &str| {
            t.series(name)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::simulator(format!("missing output series {name:?}"), ""))
        };
        match self {
            Discrepancy::Rmse { series } => Ok((rmse(&get(sim, series)?, &get(obs, series)?)?, 0)),
            Discrepancy::DualObjective { first, second } => {
                let d = dual_objective(
                    &get(sim, first)?,
                    &get(sim, second)?,
                    &get(obs, first)?,
                    &get(obs, second)?,
                )?;
                Ok((d.value, d.excluded))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsConfig {
    pub method: Method,
    /// Total simulator evaluations.
    pub nmax: usize,
    /// Evaluations per Thompson-sampling iteration.
    pub batch_size: usize,
    /// Candidate grid size.
    pub grid_size: usize,
    /// Distinct parameter points in the initial design.
    pub n_init: usize,
    /// Seeds per initial point; also the size of the fixed seed set.
    pub n_rep: usize,
    /// Lower and upper bound of each raw parameter.
    pub domain: Vec<(f64, f64)>,
    pub sigma_obs: SigmaObsRule,
    pub proposal: ProposalSpec,
    pub master_seed: u64,
    pub kernel: KernelFamily,
    pub bounds: HyperBounds,
    /// Options for the first fit.
    pub fit: FitOptions,
    /// Options for warm-started refits.
    pub refit: FitOptions,
    /// Refit every iteration while the training set has at most this many
    /// points ...
    pub refit_full_until: usize,
    /// ... and every this many iterations afterward.
    pub refit_interval: usize,
    pub discrepancy: Discrepancy,
    /// Run the simulator calls of a batch on the rayon pool.
    pub parallel_batch: bool,
    #[serde(skip)]
    pub sample: SampleOptions,
}

impl TsConfig {
    /// Defaults for the two-parameter SIR problem with `beta` and `gamma`
    /// searched over `[0.01, 1]`.
    pub fn sir(method: Method) -> Self {
        Self {
            method,
            nmax: 300,
            batch_size: 10,
            grid_size: 100,
            n_init: 5,
            n_rep: 10,
            domain: vec![(0.01, 1.0), (0.01, 1.0)],
            sigma_obs: SigmaObsRule::default(),
            proposal: ProposalSpec::default(),
            master_seed: 0,
            kernel: KernelFamily::Matern52,
            bounds: HyperBounds::default(),
            fit: FitOptions::default(),
            refit: FitOptions {
                starts: 2,
                max_evals: 100,
            },
            refit_full_until: 200,
            refit_interval: 5,
            discrepancy: Discrepancy::default(),
            parallel_batch: false,
            sample: SampleOptions::default(),
        }
    }

    pub fn n0(&self) -> usize {
        self.n_init * self.n_rep
    }

    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.n_rep == 0 {
            return Err(Error::config("n_init and n_rep must be at least 1"));
        }
        if self.n0() > self.nmax {
            return Err(Error::config(format!(
                "initial budget n_init * n_rep = {} exceeds Nmax = {}",
                self.n0(),
                self.nmax
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.grid_size == 0 {
            return Err(Error::config("grid size must be at least 1"));
        }
        if self.domain.is_empty() {
            return Err(Error::config("domain must have at least one parameter"));
        }
        for (k, &(lo, hi)) in self.domain.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!("parameter {k} has an empty range [{lo}, {hi}]")));
            }
        }
        if self.refit_interval == 0 {
            return Err(Error::config("refit interval must be at least 1"));
        }
        self.sigma_obs.validate()?;
        self.proposal.validate()
    }

    /// Maps a unit-cube point to raw parameters.
    pub fn to_domain(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.domain)
            .map(|(&v, &(lo, hi))| lo + (hi - lo) * v)
            .collect()
    }

    /// Maps raw parameters into the unit cube.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.domain)
            .map(|(&v, &(lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    /// Position in the trace, starting at 1.
    pub index: usize,
    /// The evaluated point, parameters on the unit cube.
    pub input: AugmentedInput,
    /// Parameters on the simulator's scale.
    pub params: Vec<f64>,
    /// Infinite when the simulator failed.
    pub discrepancy: f64,
    /// 0 for the initial design.
    pub iteration: usize,
    /// Seconds since the start of the run.
    pub elapsed_secs: f64,
    pub trajectory: Option<Trajectory>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceWarning {
    Fit { iteration: usize, warning: FitWarning },
    FilterFallback { iteration: usize },
    DensifyStalled { iteration: usize },
    /// The adaptive grid had nothing left to offer and was redrawn.
    GridRefreshed { iteration: usize },
    /// A fixed grid had nothing left to offer; the run stopped early.
    GridExhausted { iteration: usize, evaluations: usize },
    SimulatorFailure { index: usize, message: String },
    ExcludedObservations { index: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub method: Method,
    pub nmax: usize,
    pub seedset: Vec<u64>,
    pub evaluations: Vec<EvaluationRecord>,
    pub final_spec: Option<KernelSpec>,
    pub warnings: Vec<TraceWarning>,
}

impl OptimizationTrace {
    pub fn discrepancies(&self) -> Vec<f64> {
        self.evaluations.iter().map(|e| e.discrepancy).collect()
    }

    pub fn len(&self) -> usize {
        self.evaluations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evaluations.is_empty()
    }

    pub fn exhausted(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, TraceWarning::GridExhausted { .. }))
    }

    /// Smallest discrepancy found.
    pub fn best(&self) -> Option<&EvaluationRecord> {
        self.evaluations
            .iter()
            .filter(|e| e.discrepancy.is_finite())
            .min_by(|a, b| a.discrepancy.total_cmp(&b.discrepancy))
    }
}

/// RNG substreams of one run.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Seeds = 1,
    Design = 2,
    Grid = 3,
    Fit = 4,
    Sample = 5,
    Densify = 6,
}

fn stream(master: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(which as u64);
    rng
}

/// `n` distinct seeds.
pub fn draw_seedset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SeedSet> {
    let mut seen = HashSet::new();
    let mut seeds = Vec::with_capacity(n);
    while seeds.len() < n {
        let s = rng.random_range(0..SEED_RANGE);
        if seen.insert(s) {
            seeds.push(s);
        }
    }
    SeedSet::new(seeds)
}

fn fresh_seed<R: Rng + ?Sized>(taken: &HashSet<u64>, rng: &mut R) -> u64 {
    loop {
        let s = rng.random_range(0..SEED_RANGE);
        if !taken.contains(&s) {
            return s;
        }
    }
}

/// `n_init` LHS points, each paired with every seed of `seedset`
/// (CRN methods) or with `n_rep` freshly drawn seeds (replicate-mean
/// methods). Points are listed parameter-major.
pub fn initial_design<R: Rng + ?Sized>(
    config: &TsConfig,
    seedset: &SeedSet,
    rng: &mut R,
) -> Result<Vec<AugmentedInput>> {
    config.validate()?;
    let xs = latin_hypercube(config.n_init, config.dim(), rng);
    let mut out = Vec::with_capacity(config.n0());
    for x in xs {
        if config.method.uses_crn() {
            for &r in seedset.seeds() {
                out.push(AugmentedInput::new(x.clone(), r));
            }
        } else {
            let seeds = draw_seedset(config.n_rep, rng)?;
            for &r in seeds.seeds() {
                out.push(AugmentedInput::new(x.clone(), r));
            }
        }
    }
    Ok(out)
}

/// Grid indices chosen by `samples`: the minimizer of each draw in turn,
/// skipping `evaluated` points and points already chosen. Ties go to the
/// lower index.
///
/// Returns fewer indices than draws when the grid runs out, and
/// [`Error::Exhausted`] when nothing at all is available.
pub fn select_batch(
    samples: &[Vec<f64>],
    grid: &[AugmentedInput],
    evaluated: &HashSet<AugmentedInput>,
) -> Result<Vec<usize>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(samples.len());
    for draw in samples {
        if draw.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                got: draw.len(),
            });
        }
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| draw[a].total_cmp(&draw[b]).then(a.cmp(&b)));
        match order
            .into_iter()
            .find(|&i| !chosen.contains(&i) && !evaluated.contains(&grid[i]))
        {
            Some(i) => chosen.push(i),
            None => break,
        }
    }
    if chosen.is_empty() && !samples.is_empty() {
        return Err(Error::Exhausted);
    }
    Ok(chosen)
}

/// The fitted surrogate of one iteration.
enum Surrogate {
    Crn(CrnGp),
    Het(HetGp),
}

struct Model {
    surrogate: Surrogate,
    standardization: Standardization,
}

impl Model {
    /// Joint draws on the raw discrepancy scale.
    fn joint(
        &self,
        points: &[AugmentedInput],
        count: usize,
        seeds: &SeedSet,
        options: SampleOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let draws = match &self.surrogate {
            Surrogate::Crn(gp) => gp.joint_sample(points, count, Some(seeds), options, rng)?,
            Surrogate::Het(gp) => {
                let xs: Vec<Vec<f64>> = points.iter().map(|p| p.x.clone()).collect();
                gp.joint_sample(&xs, count, rng)?
            }
        };
        Ok(draws
            .into_iter()
            .map(|d| d.into_iter().map(|v| self.standardization.invert_mean(v)).collect())
            .collect())
    }

    fn spec(&self) -> &KernelSpec {
        match &self.surrogate {
            Surrogate::Crn(gp) => gp.spec(),
            Surrogate::Het(gp) => gp.spec(),
        }
    }
}

impl CandidateSampler for Model {
    fn marginal_draws(&self, queries: &[AugmentedInput], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let (mean, var) = match &self.surrogate {
            Surrogate::Crn(gp) => gp.predict(queries)?,
            Surrogate::Het(gp) => {
                let xs: Vec<Vec<f64>> = queries.iter().map(|p| p.x.clone()).collect();
                gp.predict(&xs)?
            }
        };
        Ok(mean
            .into_iter()
            .zip(var)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                self.standardization.invert_mean(m + v.max(0.0).sqrt() * z)
            })
            .collect())
    }
}

/// A fixed parameter point whose candidate seed moves on after each
/// evaluation: through the seed set first, then to fresh seeds.
struct Slot {
    x: Vec<f64>,
    order: Vec<u64>,
    next: usize,
}

impl Slot {
    fn current(&self) -> AugmentedInput {
        AugmentedInput::new(self.x.clone(), self.order[self.next])
    }

    fn advance<R: Rng + ?Sized>(&mut self, evaluated: &HashSet<AugmentedInput>, rng: &mut R) {
        loop {
            self.next += 1;
            if self.next == self.order.len() {
                let taken: HashSet<u64> = self.order.iter().copied().collect();
                let s = fresh_seed(&taken, rng);
                self.order.push(s);
            }
            if !evaluated.contains(&self.current()) {
                return;
            }
        }
    }
}

/// The candidate set a method searches.
enum Candidates {
    Grid(CandidateGrid),
    Slots(Vec<Slot>),
}

impl Candidates {
    fn points(&self) -> Vec<AugmentedInput> {
        match self {
            Candidates::Grid(g) => g.points().to_vec(),
            Candidates::Slots(s) => s.iter().map(Slot::current).collect(),
        }
    }
}

struct Outcome {
    trajectory: Option<Trajectory>,
    discrepancy: f64,
    excluded: usize,
    error: Option<String>,
}

/// Runs the optimizer until `nmax` evaluations (or until a fixed grid is
/// exhausted). Deterministic given the config and simulator.
pub fn run_ts<S: Simulator + ?Sized>(
    config: &TsConfig,
    simulator: &S,
    observed: &Trajectory,
) -> Result<OptimizationTrace> {
    config.validate()?;
    if simulator.dim() != config.dim() {
        return Err(Error::Shape {
            expected: simulator.dim(),
            got: config.dim(),
        });
    }
    for name in config.discrepancy.series_names() {
        match observed.series(name) {
            Some(s) if !s.is_empty() => {}
            _ => {
                return Err(Error::config(format!("observed trajectory lacks series {name:?}")))
            }
        }
    }

    let start = Instant::now();
    let method = config.method;
    let d = config.dim();
    let mut seed_rng = stream(config.master_seed, Stream::Seeds);
    let mut design_rng = stream(config.master_seed, Stream::Design);
    let mut grid_rng = stream(config.master_seed, Stream::Grid);
    let mut fit_rng = stream(config.master_seed, Stream::Fit);
    let mut sample_rng = stream(config.master_seed, Stream::Sample);
    let mut densify_rng = stream(config.master_seed, Stream::Densify);

    let seedset = draw_seedset(config.n_rep, &mut seed_rng)?;
    // Replicate-mean methods ignore seeds on the grid.
    let placeholder = SeedSet::new(vec![0])?;
    let grid_seeds = if method.uses_crn() { &seedset } else { &placeholder };

    let mut trace = OptimizationTrace {
        method,
        nmax: config.nmax,
        seedset: seedset.seeds().to_vec(),
        evaluations: Vec::with_capacity(config.nmax),
        final_spec: None,
        warnings: Vec::new(),
    };
    let mut evaluated: HashSet<AugmentedInput> = HashSet::new();
    let mut seeds_at: HashMap<Vec<u64>, HashSet<u64>> = HashMap::new();
    let mut warned_excluded = false;

    let evaluate = |p: &AugmentedInput| -> Outcome {
        let params = config.to_domain(&p.x);
        let attempt = || -> Result<(Trajectory, f64, usize)> {
            let traj = simulator.simulate(&params, p.r)?;
            let (d, excluded) = config.discrepancy.evaluate(&traj, observed)?;
            if d.is_finite() {
                Ok((traj, d, excluded))
            } else {
                Err(Error::numerical(format!("non-finite discrepancy {d}")))
            }
        };
        match attempt().or_else(|_| attempt()) {
            Ok((traj, d, excluded)) => Outcome {
                trajectory: Some(traj),
                discrepancy: d,
                excluded,
                error: None,
            },
            Err(e) => Outcome {
                trajectory: None,
                discrepancy: f64::INFINITY,
                excluded: 0,
                error: Some(e.to_string()),
            },
        }
    };

    let mut record = |batch: Vec<AugmentedInput>,
                      iteration: usize,
                      trace: &mut OptimizationTrace,
                      evaluated: &mut HashSet<AugmentedInput>,
                      seeds_at: &mut HashMap<Vec<u64>, HashSet<u64>>| {
        let outcomes: Vec<Outcome> = if config.parallel_batch {
            batch.par_iter().map(&evaluate).collect()
        } else {
            batch.iter().map(&evaluate).collect()
        };
        for (p, o) in batch.into_iter().zip(outcomes) {
            let index = trace.evaluations.len() + 1;
            if let Some(msg) = &o.error {
                log::warn!("evaluation {index} failed: {msg}");
                trace.warnings.push(TraceWarning::SimulatorFailure {
                    index,
                    message: msg.clone(),
                });
            }
            if o.excluded > 0 && !warned_excluded {
                warned_excluded = true;
                trace.warnings.push(TraceWarning::ExcludedObservations {
                    index,
                    count: o.excluded,
                });
            }
            evaluated.insert(p.clone());
            seeds_at
                .entry(crate::input::x_key(&p.x))
                .or_default()
                .insert(p.r);
            trace.evaluations.push(EvaluationRecord {
                index,
                params: config.to_domain(&p.x),
                input: p,
                discrepancy: o.discrepancy,
                iteration,
                elapsed_secs: start.elapsed().as_secs_f64(),
                trajectory: o.trajectory,
                error: o.error,
            });
        }
    };

    let design = initial_design(config, &seedset, &mut design_rng)?;
    record(design, 0, &mut trace, &mut evaluated, &mut seeds_at);

    let mut candidates = match method {
        Method::ACrn | Method::FCrn | Method::AHet => {
            Candidates::Grid(lhs_grid(config.grid_size, d, grid_seeds, &mut grid_rng)?)
        }
        Method::FgCrn | Method::FHet => {
            let grid = lhs_grid(config.grid_size, d, grid_seeds, &mut grid_rng)?;
            let slots = grid
                .points()
                .iter()
                .map(|p| {
                    let mut order = vec![p.r];
                    order.extend(seedset.seeds().iter().copied().filter(|&s| s != p.r));
                    Slot {
                        x: p.x.clone(),
                        order,
                        next: 0,
                    }
                })
                .collect();
            Candidates::Slots(slots)
        }
    };

    let mut spec: Option<KernelSpec> = None;
    let mut iteration = 0;
    while trace.len() < config.nmax {
        iteration += 1;
        let (inputs, responses): (Vec<AugmentedInput>, Vec<f64>) = trace
            .evaluations
            .iter()
            .filter(|e| e.discrepancy.is_finite())
            .map(|e| (e.input.clone(), e.discrepancy))
            .unzip();
        if inputs.is_empty() {
            return Err(Error::numerical("every evaluation so far has failed"));
        }
        let data = EvaluationDataset::new(inputs, responses)?;

        let refit = spec.is_none()
            || data.len() <= config.refit_full_until
            || iteration % config.refit_interval == 0;
        if refit {
            let options = if spec.is_none() { &config.fit } else { &config.refit };
            let fit = if method.uses_crn() {
                fit_crn_hyperparameters(
                    &data,
                    config.kernel,
                    &config.bounds,
                    options,
                    spec.as_ref(),
                    &mut fit_rng,
                )?
            } else {
                fit_het_hyperparameters(
                    &aggregate_replicates(&data),
                    config.kernel,
                    &config.bounds,
                    options,
                    spec.as_ref(),
                    &mut fit_rng,
                )?
            };
            if let Some(warning) = fit.warning {
                trace.warnings.push(TraceWarning::Fit { iteration, warning });
            }
            spec = Some(fit.spec);
        }
        let current_spec = spec.as_ref().expect("spec set above");
        let model = Model {
            surrogate: if method.uses_crn() {
                Surrogate::Crn(CrnGp::new(&data, current_spec)?)
            } else {
                Surrogate::Het(HetGp::new(&aggregate_replicates(&data), current_spec)?)
            },
            standardization: data.standardization(),
        };

        if method.adaptive() {
            if let Candidates::Grid(grid) = &mut candidates {
                let points = grid.points().to_vec();
                let draw = model
                    .joint(&points, 1, grid_seeds, config.sample, &mut sample_rng)?
                    .remove(0);
                let sigma = config.sigma_obs.value(data.responses());
                let logl: Vec<f64> = draw.iter().map(|&v| log_likelihood(v, sigma)).collect();
                // Shifting by the maximum leaves the normalized weights
                // unchanged and keeps them from underflowing.
                let top = logl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logl.iter().map(|l| (l - top).exp()).collect();
                let filtered = filter_grid(grid, &weights, &draw, &mut grid_rng)?;
                if filtered.fallback {
                    trace.warnings.push(TraceWarning::FilterFallback { iteration });
                }
                let kept_logl = filtered.kept.iter().map(|&i| logl[i]).collect();
                let dense = densify(
                    filtered.grid,
                    kept_logl,
                    &model,
                    &config.proposal,
                    grid_seeds,
                    sigma,
                    &mut densify_rng,
                )?;
                if dense.stalled {
                    trace.warnings.push(TraceWarning::DensifyStalled { iteration });
                }
                *grid = dense.grid;
            }
        }

        let remaining = config.nmax - trace.len();
        let count = config.batch_size.min(remaining);
        let excluded: HashSet<AugmentedInput> = if method.uses_crn() {
            evaluated.clone()
        } else {
            HashSet::new()
        };
        let mut points = candidates.points();
        let draws = model.joint(&points, count, grid_seeds, config.sample, &mut sample_rng)?;
        let chosen = match select_batch(&draws, &points, &excluded) {
            Ok(chosen) => chosen,
            Err(Error::Exhausted) if method.adaptive() => {
                trace.warnings.push(TraceWarning::GridRefreshed { iteration });
                let fresh = lhs_grid(config.grid_size, d, grid_seeds, &mut grid_rng)?;
                points = fresh.points().to_vec();
                candidates = Candidates::Grid(fresh);
                let draws =
                    model.joint(&points, count, grid_seeds, config.sample, &mut sample_rng)?;
                select_batch(&draws, &points, &excluded)?
            }
            Err(Error::Exhausted) => {
                log::warn!(
                    "{method}: candidate grid exhausted after {} evaluations",
                    trace.len()
                );
                trace.warnings.push(TraceWarning::GridExhausted {
                    iteration,
                    evaluations: trace.len(),
                });
                trace.final_spec = Some(model.spec().clone());
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };

        let mut order = chosen;
        order.sort_unstable();
        let batch: Vec<AugmentedInput> = order
            .iter()
            .map(|&i| {
                let p = &points[i];
                if method.uses_crn() {
                    p.clone()
                } else {
                    let taken = seeds_at.get(&crate::input::x_key(&p.x));
                    let empty = HashSet::new();
                    let r = fresh_seed(taken.unwrap_or(&empty), &mut seed_rng);
                    AugmentedInput::new(p.x.clone(), r)
                }
            })
            .collect();
        record(batch, iteration, &mut trace, &mut evaluated, &mut seeds_at);

        if let Candidates::Slots(slots) = &mut candidates {
            if method == Method::FgCrn {
                for &i in &order {
                    slots[i].advance(&evaluated, &mut seed_rng);
                }
            }
        }
        trace.final_spec = Some(model.spec().clone());
    }
    Ok(trace)
}
