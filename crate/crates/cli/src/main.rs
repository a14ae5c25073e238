//! `carleman-kit`: runs a scenario file and writes a JSON report plus CSV data.
//!
//! Exit status: 0 when every check passes, 1 when a check fails (the report is
//! still written), 2 for unusable input, 3 for runtime errors.

mod commands;
mod report;
mod scenario;

use clap::Parser;
use report::{ReportBuilder, Timing};
use scenario::Scenario;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

const EXIT_CHECK: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "carleman-kit", version, about = "Scenario-driven checks for limiting Carleman weights and related transforms")]
struct Cli {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for report.json and CSV files.
    #[arg(long, default_value = "carleman-out")]
    out: PathBuf,
    /// Worker threads; falls back to CARLEMAN_KIT_THREADS, then to all cores.
    #[arg(long, env = "CARLEMAN_KIT_THREADS")]
    threads: Option<usize>,
    /// Multiplier applied to every residual tolerance.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_PARSE) } else { ExitCode::SUCCESS };
        }
    };
    if !(cli.tolerance_scale > 0.0 && cli.tolerance_scale.is_finite()) {
        eprintln!("error: --tolerance-scale must be a positive number");
        return ExitCode::from(EXIT_PARSE);
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: thread count must be at least 1");
            return ExitCode::from(EXIT_PARSE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let scenario = match Scenario::load(&cli.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_PARSE);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let mut rep = ReportBuilder::new(&cli.out, cli.tolerance_scale);
    if let Err(e) = commands::run(&scenario, &mut rep) {
        eprintln!("error: {} failed: {e}", scenario.command.name());
        return ExitCode::from(EXIT_RUNTIME);
    }
    let report = rep.finish(
        scenario.command.name(),
        scenario.seed,
        Timing { started_unix_seconds: started, elapsed_seconds: clock.elapsed().as_secs_f64() },
    );
    let path = cli.out.join("report.json");
    let text = match serde_json::to_string_pretty(&report) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    if let Err(e) = std::fs::write(&path, text + "\n") {
        eprintln!("error: cannot write {}: {e}", path.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    for c in &report.checks {
        println!("{} {} = {:e} ({} {:?})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.relation, c.bound);
    }
    println!("report: {}", path.display());
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK)
    }
}
