use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use trajbo::metrics::DEFAULT_THRESHOLDS;
use trajbo::sim::{simulate_sir, PluginRequest, PluginResponse};
use trajbo::SirConfig;
use trajbo_harness::{
    emit_report, master_seed_from_env, parse_sweep, run_experiments, RunEvent, RunOptions,
};

#[derive(Parser)]
#[command(name = "trajbo", version, about = "Trajectory-oriented Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run every row of a sweep file.
    Run {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent runs (default: available processors).
        #[arg(long)]
        parallelism: Option<usize>,
        /// External simulator executable.
        #[arg(long)]
        plugin: Option<PathBuf>,
        /// Sweep master seed; TRAJBO_MASTER_SEED overrides it.
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
    },
    /// Summarize a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one SIR trajectory.
    Simulate {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        emit: Emit,
    },
    /// Serve one SIR request over the plugin protocol.
    #[command(hide = true)]
    SirPlugin,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            sweep,
            out,
            parallelism,
            plugin,
            master_seed,
        } => {
            let rows = parse_sweep(&sweep)?;
            if rows.is_empty() {
                eprintln!("note: {} has no rows; nothing to run", sweep.display());
                return Ok(ExitCode::SUCCESS);
            }
            let parallelism = parallelism.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
            let options = RunOptions {
                out_dir: out.clone(),
                parallelism,
                master_seed: master_seed_from_env()?.unwrap_or(master_seed),
                plugin,
            };
            let progress = |event: RunEvent| match event {
                RunEvent::Started { id } => log::info!("started {id}"),
                RunEvent::Finished { id, evaluations, exhausted } => {
                    let note = if exhausted { " (grid exhausted)" } else { "" };
                    eprintln!("done {id}: {evaluations} evaluations{note}");
                }
                RunEvent::Failed { id, error } => eprintln!("FAILED {id}: {error}"),
            };
            let manifest = run_experiments(&rows, &options, &progress)?;
            let failed = manifest.failed();
            eprintln!(
                "{} runs, {} failed; results in {}",
                manifest.runs.len(),
                failed,
                out.display()
            );
            Ok(if failed > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Report {
            input,
            thresholds,
            out,
        } => {
            let outcome = emit_report(&input, &thresholds, &out)?;
            for p in &outcome.problems {
                eprintln!("skipped {p}");
            }
            eprintln!(
                "{} runs, {} summary rows -> {}; evaluations -> {}",
                outcome.runs,
                outcome.rows,
                out.display(),
                outcome.evaluations_path.display()
            );
            Ok(if outcome.problems.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Simulate {
            beta,
            gamma,
            seed,
            emit,
        } => {
            let traj = simulate_sir(&SirConfig {
                beta,
                gamma,
                seed,
                ..SirConfig::default()
            })?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            match emit {
                Emit::Json => {
                    serde_json::to_writer(&mut out, &PluginResponse::from_trajectory(&traj))?;
                    writeln!(out)?;
                }
                Emit::Csv => {
                    let names: Vec<&String> = traj.outputs.keys().collect();
                    let mut w = csv::Writer::from_writer(out);
                    let mut header = vec!["t"];
                    header.extend(names.iter().map(|s| s.as_str()));
                    w.write_record(&header)?;
                    for (i, t) in traj.times.iter().enumerate() {
                        let mut rec = vec![t.to_string()];
                        rec.extend(names.iter().map(|n| traj.outputs[*n][i].to_string()));
                        w.write_record(&rec)?;
                    }
                    w.flush()?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SirPlugin => {
            let mut line = String::new();
            std::io::stdin().lock().read_line(&mut line)?;
            let request: PluginRequest = serde_json::from_str(&line).context("parsing request")?;
            if request.x.len() != 2 {
                bail!("expected 2 parameters, got {}", request.x.len());
            }
            let traj = simulate_sir(&SirConfig {
                beta: request.x[0],
                gamma: request.x[1],
                seed: request.seed,
                ..SirConfig::default()
            })?;
            let mut out = std::io::stdout().lock();
            serde_json::to_writer(&mut out, &PluginResponse::from_trajectory(&traj))?;
            writeln!(out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
