use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trajbo::sim::{PluginHandle, PluginSimulator};
use trajbo::{run_ts, Method, OptimizationTrace, Simulator, SirSimulator};

use crate::error::{HarnessError, Result};
use crate::sweep::{GroundTruth, SweepRow};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Environment variable that overrides the sweep master seed.
pub const MASTER_SEED_ENV: &str = "TRAJBO_MASTER_SEED";

pub fn master_seed_from_env() -> Result<Option<u64>> {
    match std::env::var(MASTER_SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HarnessError::Other(format!("{MASTER_SEED_ENV}={raw:?} is not a u64"))),
        Err(_) => Ok(None),
    }
}

/// Master seed of one run: the first eight bytes of SHA-256 over the
/// derivation tuple.
pub fn derive_seed(master: u64, row: usize, method: Method, replicate: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(b"trajbo-run\0");
    h.update(master.to_le_bytes());
    h.update((row as u64).to_le_bytes());
    h.update(method.name().as_bytes());
    h.update([0u8]);
    h.update((replicate as u64).to_le_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Writes `path` through a temporary sibling and a rename, so readers never
/// see a partial file. The temporary is removed if `fill` fails.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| HarnessError::Other(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let result = (|| {
        let file = fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
        let mut out = std::io::BufWriter::new(file);
        fill(&mut out)?;
        let file = out
            .into_inner()
            .map_err(|e| HarnessError::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Concurrent runs. With 1, each run evaluates its batches in parallel
    /// instead.
    pub parallelism: usize,
    pub master_seed: u64,
    /// External simulator executable; the built-in SIR model otherwise.
    pub plugin: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunEvent {
    Started { id: String },
    Finished { id: String, evaluations: usize, exhausted: bool },
    Failed { id: String, error: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub row: usize,
    pub method: Method,
    pub replicate: usize,
    pub seed: u64,
    pub nmax: usize,
    pub n_init: usize,
    pub n_rep: usize,
    pub n_ts: usize,
    pub grid_size: usize,
    pub truth: GroundTruth,
    pub status: RunStatus,
    /// Result file name relative to the output directory.
    pub file: Option<String>,
    pub evaluations: usize,
    pub exhausted: bool,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub runs: Vec<RunRecord>,
}

impl Manifest {
    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed).count()
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Json { path, source })
    }
}

pub(crate) fn run_id(row: usize, method: Method, replicate: usize) -> String {
    format!("row{row:03}_{}_rep{replicate:02}", method.name())
}

/// Per-evaluation CSV of one run.
fn write_trace(path: &Path, trace: &OptimizationTrace, dim: usize) -> Result<()> {
    write_atomic(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string(), "iteration".into(), "seed".into()];
        header.extend((1..=dim).map(|k| format!("x{k}")));
        header.extend((1..=dim).map(|k| format!("param{k}")));
        header.extend(["discrepancy".into(), "error".into()]);
        w.write_record(&header).map_err(|e| HarnessError::csv(path, e))?;
        for e in &trace.evaluations {
            let mut rec = vec![e.index.to_string(), e.iteration.to_string(), e.input.r.to_string()];
            rec.extend(e.input.x.iter().map(|&v| format_float(v)));
            rec.extend(e.params.iter().map(|&v| format_float(v)));
            rec.push(format_float(e.discrepancy));
            rec.push(e.error.clone().unwrap_or_default());
            w.write_record(&rec).map_err(|e| HarnessError::csv(path, e))?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    })
}

struct Job<'a> {
    row: &'a SweepRow,
    replicate: usize,
}

fn execute(job: &Job, options: &RunOptions, simulator: &dyn Simulator) -> RunRecord {
    let row = job.row;
    let id = run_id(row.row, row.method, job.replicate);
    let seed = derive_seed(options.master_seed, row.row, row.method, job.replicate);
    let mut record = RunRecord {
        id: id.clone(),
        row: row.row,
        method: row.method,
        replicate: job.replicate,
        seed,
        nmax: row.config.nmax,
        n_init: row.config.n_init,
        n_rep: row.config.n_rep,
        n_ts: row.config.batch_size,
        grid_size: row.config.grid_size,
        truth: row.truth,
        status: RunStatus::Failed,
        file: None,
        evaluations: 0,
        exhausted: false,
        warnings: Vec::new(),
        error: None,
    };
    let mut config = row.config.clone();
    config.master_seed = seed;
    config.parallel_batch = options.parallelism == 1;

    let outcome = simulator
        .simulate(&[row.truth.beta, row.truth.gamma], row.truth.seed)
        .map_err(HarnessError::from)
        .and_then(|observed| Ok(run_ts(&config, simulator, &observed)?))
        .and_then(|trace| {
            let file = format!("{id}.csv");
            write_trace(&options.out_dir.join(&file), &trace, config.dim())?;
            Ok((trace, file))
        });
    match outcome {
        Ok((trace, file)) => {
            record.status = RunStatus::Ok;
            record.file = Some(file);
            record.evaluations = trace.len();
            record.exhausted = trace.exhausted();
            record.warnings = trace.warnings.iter().map(|w| format!("{w:?}")).collect();
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Runs every `(row, replicate)` of the sweep and writes one CSV per run
/// plus `manifest.json` into `options.out_dir`. Individual failures are
/// recorded in the manifest rather than returned.
pub fn run_experiments(
    sweep: &[SweepRow],
    options: &RunOptions,
    progress: &(dyn Fn(RunEvent) + Sync),
) -> Result<Manifest> {
    if sweep.is_empty() {
        return Err(HarnessError::Other("sweep has no rows".into()));
    }
    if options.parallelism == 0 {
        return Err(HarnessError::Other("parallelism must be at least 1".into()));
    }
    fs::create_dir_all(&options.out_dir).map_err(|e| HarnessError::io(&options.out_dir, e))?;

    let simulator: Box<dyn Simulator> = match &options.plugin {
        Some(path) => Box::new(PluginSimulator::new(PluginHandle::new(path), 2)),
        None => Box::new(SirSimulator::default()),
    };
    let jobs: Vec<Job> = sweep
        .iter()
        .flat_map(|row| (1..=row.replicates).map(move |replicate| Job { row, replicate }))
        .collect();
    info!("{} runs on {} workers", jobs.len(), options.parallelism);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism)
        .build()
        .map_err(|e| HarnessError::Other(format!("building worker pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .with_max_len(1)
            .map(|job| {
                let id = run_id(job.row.row, job.row.method, job.replicate);
                progress(RunEvent::Started { id: id.clone() });
                let record = execute(job, options, simulator.as_ref());
                match &record.error {
                    None => progress(RunEvent::Finished {
                        id,
                        evaluations: record.evaluations,
                        exhausted: record.exhausted,
                    }),
                    Some(error) => {
                        warn!("{id} failed: {error}");
                        progress(RunEvent::Failed {
                            id,
                            error: error.clone(),
                        })
                    }
                }
                record
            })
            .collect()
    });

    let manifest = Manifest {
        master_seed: options.master_seed,
        runs,
    };
    let path = options.out_dir.join(MANIFEST_FILE);
    write_atomic(&path, |out| {
        serde_json::to_writer_pretty(&mut *out, &manifest).map_err(|source| HarnessError::Json {
            path: path.clone(),
            source,
        })?;
        writeln!(out).map_err(|e| HarnessError::io(&path, e))
    })?;
    Ok(manifest)
}
