use std::path::{Path, PathBuf};

use log::warn;
use trajbo::metrics::QualityReport;

use crate::error::{HarnessError, Result};
use crate::runner::{format_float, write_atomic, Manifest, RunRecord, RunStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    /// Runs that made it into the summary.
    pub runs: usize,
    /// Summary rows written (runs x thresholds).
    pub rows: usize,
    pub evaluations_path: PathBuf,
    /// Runs that were skipped and why.
    pub problems: Vec<String>,
}

struct Loaded {
    x: Vec<Vec<f64>>,
    seeds: Vec<u64>,
    index: Vec<usize>,
    iteration: Vec<usize>,
    discrepancies: Vec<f64>,
}

fn load_run(dir: &Path, run: &RunRecord) -> std::result::Result<Loaded, String> {
    let file = run.file.as_ref().ok_or("no result file recorded")?;
    let path = dir.join(file);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("{}: missing column {name}", path.display()))
    };
    let (i_index, i_iter, i_seed, i_d) = (col("index")?, col("iteration")?, col("seed")?, col("discrepancy")?);
    let x_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x') && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();

    let mut out = Loaded {
        x: Vec::new(),
        seeds: Vec::new(),
        index: Vec::new(),
        iteration: Vec::new(),
        discrepancies: Vec::new(),
    };
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        let bad = |what: &str| format!("{}: line {}: bad {what}", path.display(), line + 2);
        let field = |i: usize| record.get(i).unwrap_or("");
        out.index.push(field(i_index).parse().map_err(|_| bad("index"))?);
        out.iteration.push(field(i_iter).parse().map_err(|_| bad("iteration"))?);
        out.seeds.push(field(i_seed).parse().map_err(|_| bad("seed"))?);
        out.discrepancies.push(field(i_d).parse().map_err(|_| bad("discrepancy"))?);
        out.x.push(
            x_cols
                .iter()
                .map(|&i| field(i).parse().map_err(|_| bad("coordinate")))
                .collect::<std::result::Result<_, _>>()?,
        );
    }
    if out.discrepancies.len() != run.evaluations {
        return Err(format!(
            "{}: {} evaluations, manifest says {}",
            path.display(),
            out.discrepancies.len(),
            run.evaluations
        ));
    }
    Ok(out)
}

fn evaluations_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_evaluations.csv"))
}

/// Joins the runs listed in `in_dir/manifest.json` with their quality
/// metrics. Writes the summary to `out` (one row per run and threshold) and
/// a long-format evaluation table next to it (`<stem>_evaluations.csv`).
///
/// Failed, missing or unreadable runs are skipped and listed in
/// [`ReportOutcome::problems`].
pub fn emit_report(in_dir: &Path, thresholds: &[f64], out: &Path) -> Result<ReportOutcome> {
    if thresholds.is_empty() {
        return Err(HarnessError::Other("at least one threshold is required".into()));
    }
    if !in_dir.join(crate::MANIFEST_FILE).exists() {
        return Err(HarnessError::NoResults(in_dir.to_path_buf()));
    }
    let manifest = Manifest::read(in_dir)?;
    if manifest.runs.is_empty() {
        return Err(HarnessError::NoResults(in_dir.to_path_buf()));
    }

    let mut problems = Vec::new();
    let mut loaded = Vec::new();
    for run in &manifest.runs {
        if run.status == RunStatus::Failed {
            problems.push(format!(
                "{}: run failed: {}",
                run.id,
                run.error.as_deref().unwrap_or("unknown error")
            ));
            continue;
        }
        match load_run(in_dir, run) {
            Ok(data) => loaded.push((run, data)),
            Err(e) => {
                warn!("skipping {}: {e}", run.id);
                problems.push(format!("{}: {e}", run.id));
            }
        }
    }
    if loaded.is_empty() {
        return Err(HarnessError::NoResults(in_dir.to_path_buf()));
    }

    let mut rows = 0;
    write_atomic(out, |w| {
        let mut w = csv::Writer::from_writer(w);
        let wr = |w: &mut csv::Writer<_>, rec: &[String]| {
            w.write_record(rec).map_err(|e| HarnessError::csv(out, e))
        };
        wr(
            &mut w,
            &[
                "run_id", "row", "method", "replicate", "seed", "Nmax", "n_init", "n_rep", "n_TS",
                "M", "evaluations", "exhausted", "threshold", "count", "proportion", "rauc",
            ]
            .map(String::from),
        )?;
        for (run, data) in &loaded {
            let report = QualityReport::from_discrepancies(&data.discrepancies, thresholds, run.nmax);
            for (k, threshold) in thresholds.iter().enumerate() {
                wr(
                    &mut w,
                    &[
                        run.id.clone(),
                        run.row.to_string(),
                        run.method.name().to_string(),
                        run.replicate.to_string(),
                        run.seed.to_string(),
                        run.nmax.to_string(),
                        run.n_init.to_string(),
                        run.n_rep.to_string(),
                        run.n_ts.to_string(),
                        run.grid_size.to_string(),
                        run.evaluations.to_string(),
                        run.exhausted.to_string(),
                        format_float(*threshold),
                        report.counts[k].to_string(),
                        format_float(report.proportions[k]),
                        format_float(report.rauc[k]),
                    ],
                )?;
                rows += 1;
            }
        }
        w.flush().map_err(|e| HarnessError::io(out, e))
    })?;

    let long = evaluations_path(out);
    write_atomic(&long, |w| {
        let mut w = csv::Writer::from_writer(w);
        let dim = loaded.iter().map(|(_, d)| d.x.first().map_or(0, Vec::len)).max().unwrap_or(0);
        let mut header: Vec<String> = ["run_id", "row", "method", "replicate", "index", "iteration"]
            .map(String::from)
            .to_vec();
        header.extend((1..=dim).map(|k| format!("x{k}")));
        header.extend(["seed".to_string(), "discrepancy".to_string()]);
        w.write_record(&header).map_err(|e| HarnessError::csv(&long, e))?;
        for (run, data) in &loaded {
            for i in 0..data.discrepancies.len() {
                let mut rec = vec![
                    run.id.clone(),
                    run.row.to_string(),
                    run.method.name().to_string(),
                    run.replicate.to_string(),
                    data.index[i].to_string(),
                    data.iteration[i].to_string(),
                ];
                rec.extend((0..dim).map(|k| data.x[i].get(k).map_or(String::new(), |&v| format_float(v))));
                rec.push(data.seeds[i].to_string());
                rec.push(format_float(data.discrepancies[i]));
                w.write_record(&rec).map_err(|e| HarnessError::csv(&long, e))?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(&long, e))
    })?;

    Ok(ReportOutcome {
        runs: loaded.len(),
        rows,
        evaluations_path: long,
        problems,
    })
}
