//! Searches for SIR trajectories close to a synthetic observation.
//!
//! Usage: `cargo run --release --example sir_calibration [method] [master_seed] [nmax]`

use std::time::Instant;

use trajbo::metrics::{threshold_counts, DEFAULT_THRESHOLDS};
use trajbo::sim::simulate_sir;
use trajbo::{run_ts, Method, SirConfig, SirSimulator, TsConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let method: Method = args.get(1).map_or("aCRN", String::as_str).parse()?;
    let master_seed: u64 = args.get(2).map_or(Ok(1), |s| s.parse())?;
    let nmax: usize = args.get(3).map_or(Ok(300), |s| s.parse())?;

    let observed = simulate_sir(&SirConfig {
        beta: 0.7,
        gamma: 0.2,
        seed: 50,
        ..SirConfig::default()
    })?;
    let simulator = SirSimulator::new(SirConfig::default());
    let mut config = TsConfig::sir(method);
    config.master_seed = master_seed;
    config.nmax = nmax;

    let start = Instant::now();
    let trace = run_ts(&config, &simulator, &observed)?;
    let report = threshold_counts(&trace, &DEFAULT_THRESHOLDS);
    println!(
        "{method} seed={master_seed}: {} evaluations in {:.1}s",
        trace.len(),
        start.elapsed().as_secs_f64()
    );
    if let Some(best) = trace.best() {
        println!(
            "best discrepancy {:.3} at beta={:.4} gamma={:.4} seed={}",
            best.discrepancy, best.params[0], best.params[1], best.input.r
        );
    }
    for (i, th) in report.thresholds.iter().enumerate() {
        println!(
            "  < {th}: count {} proportion {:.4} rAUC {:.5}",
            report.counts[i], report.proportions[i], report.rauc[i]
        );
    }
    for w in &trace.warnings {
        println!("  warning: {w:?}");
    }
    Ok(())
}
