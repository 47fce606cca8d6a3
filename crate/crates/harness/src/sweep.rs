use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trajbo::{Method, SirConfig, TsConfig};

use crate::error::{HarnessError, Result};

/// Recognized sweep columns, in canonical order.
pub const SWEEP_COLUMNS: [&str; 10] = [
    "method",
    "Nmax",
    "n_init",
    "n_rep",
    "n_TS",
    "M",
    "replicates",
    "beta_true",
    "gamma_true",
    "seed_true",
];

const REQUIRED: [&str; 5] = ["Nmax", "n_init", "n_rep", "n_TS", "M"];

/// Parameters and seed of the simulated observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for GroundTruth {
    fn default() -> Self {
        Self {
            beta: 0.7,
            gamma: 0.2,
            seed: 50,
        }
    }
}

/// One sweep row for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Data row in the sweep file, from 1.
    pub row: usize,
    pub method: Method,
    /// Optimizer settings; `master_seed` is replaced per replicate.
    pub config: TsConfig,
    pub replicates: usize,
    pub truth: GroundTruth,
}

pub fn parse_sweep(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_sweep_str(&text)
}

/// Parses sweep CSV text. A file with a header and no rows is an empty sweep.
pub fn parse_sweep_str(text: &str) -> Result<Vec<SweepRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header_err = |column: &str, message: String| HarnessError::Sweep {
        row: 0,
        column: column.to_string(),
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| header_err("", e.to_string()))?
        .clone();

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        if !SWEEP_COLUMNS.contains(&name) {
            return Err(header_err(
                name,
                format!("unknown column; expected a subset of {}", SWEEP_COLUMNS.join(", ")),
            ));
        }
        if index.insert(name, i).is_some() {
            return Err(header_err(name, "column appears twice".into()));
        }
    }
    for name in REQUIRED {
        if !index.contains_key(name) {
            return Err(header_err(name, "required column is missing".into()));
        }
    }

    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| HarnessError::Sweep {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |name: &str| -> Option<&str> {
            index
                .get(name)
                .and_then(|&i| record.get(i))
                .filter(|s| !s.is_empty())
        };
        let err = |column: &str, message: String| HarnessError::Sweep {
            row,
            column: column.to_string(),
            message,
        };
        let required = |name: &str| -> Result<&str> {
            cell(name).ok_or_else(|| err(name, "value is missing".into()))
        };
        let count = |name: &str, raw: &str| -> Result<usize> {
            raw.parse::<usize>()
                .map_err(|_| err(name, format!("expected a non-negative integer, got {raw:?}")))
        };

        let nmax = count("Nmax", required("Nmax")?)?;
        let n_init = count("n_init", required("n_init")?)?;
        let n_rep = count("n_rep", required("n_rep")?)?;
        let n_ts = count("n_TS", required("n_TS")?)?;
        let grid = count("M", required("M")?)?;
        let replicates = match cell("replicates") {
            Some(raw) => count("replicates", raw)?,
            None => 10,
        };
        if replicates == 0 {
            return Err(err("replicates", "must be at least 1".into()));
        }

        let mut truth = GroundTruth::default();
        if let Some(raw) = cell("beta_true") {
            truth.beta = raw
                .parse()
                .map_err(|_| err("beta_true", format!("expected a number, got {raw:?}")))?;
        }
        if let Some(raw) = cell("gamma_true") {
            truth.gamma = raw
                .parse()
                .map_err(|_| err("gamma_true", format!("expected a number, got {raw:?}")))?;
        }
        if let Some(raw) = cell("seed_true") {
            truth.seed = raw
                .parse()
                .map_err(|_| err("seed_true", format!("expected a non-negative integer, got {raw:?}")))?;
        }
        let sir = SirConfig {
            beta: truth.beta,
            gamma: truth.gamma,
            seed: truth.seed,
            ..SirConfig::default()
        };
        if let Err(e) = sir.validate() {
            let column = if truth.beta.is_finite() && (0.0..=1.0).contains(&truth.beta) {
                "gamma_true"
            } else {
                "beta_true"
            };
            return Err(err(column, e.to_string()));
        }

        let methods = match cell("method") {
            None => Method::ALL.to_vec(),
            Some(raw) if raw.eq_ignore_ascii_case("all") => Method::ALL.to_vec(),
            Some(raw) => raw
                .split(['|', ';'])
                .map(|m| m.trim().parse::<Method>().map_err(|e| err("method", e.to_string())))
                .collect::<Result<Vec<_>>>()?,
        };

        for method in methods {
            let mut config = TsConfig::sir(method);
            config.nmax = nmax;
            config.n_init = n_init;
            config.n_rep = n_rep;
            config.batch_size = n_ts;
            config.grid_size = grid;
            if let Err(e) = config.validate() {
                let column = if n_init == 0 || n_rep == 0 {
                    if n_init == 0 { "n_init" } else { "n_rep" }
                } else if config.n0() > nmax {
                    "Nmax"
                } else if n_ts == 0 {
                    "n_TS"
                } else {
                    "M"
                };
                return Err(err(column, e.to_string()));
            }
            rows.push(SweepRow {
                row,
                method,
                config,
                replicates,
                truth,
            });
        }
    }
    Ok(rows)
}
