//! `mobsim` — scenario simulation, analytics, model fitting and reporting.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 rejected input (config,
//! network or file validation).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mobsim_core::error::Error;
use mobsim_core::mfd::{FitConfig, MfdKind};
use mobsim_core::pipeline;

#[derive(Parser)]
#[command(name = "mobsim", version, about = "Mesoscopic multimodal traffic simulation with on-demand fleets and network-level flow analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios end to end.
    Simulate {
        /// Scenario config path(s); each runs into <out>/<scenario name>.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Output directory root.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute network analytics from a finished simulation.
    Analyze {
        /// Simulation output directory (from `simulate`).
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the production model to an interval sample file.
    Fit {
        /// mfd_samples.csv produced by `analyze`.
        #[arg(long)]
        samples: PathBuf,
        /// Model kind: vmfd or pmfd.
        #[arg(long, default_value = "vmfd")]
        model: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare two or more analysis directories.
    Report {
        #[arg(long = "analysis", required = true)]
        analyses: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a network directory.
    Validate {
        #[arg(long)]
        network: PathBuf,
    },
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

/// Scenario fan-out bounded by MFD_MOBSIM_THREADS (default: one per core).
fn worker_limit(jobs: usize) -> usize {
    let default = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let limit = std::env::var("MFD_MOBSIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(default);
    limit.min(jobs).max(1)
}

fn simulate(configs: &[PathBuf], out: &PathBuf) -> anyhow::Result<()> {
    // Per-scenario output directories come from the scenario names; load
    // configs up front so invalid ones fail before any work starts.
    let mut jobs = Vec::new();
    for path in configs {
        let config = mobsim_core::scenario::ScenarioConfig::load(path)?;
        jobs.push((path.clone(), out.join(&config.name)));
    }
    let workers = worker_limit(jobs.len());
    let queue = std::sync::Mutex::new(jobs.into_iter());
    let failures: std::sync::Mutex<Vec<anyhow::Error>> = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = queue.lock().expect("queue lock").next();
                let Some((config, out_dir)) = job else { break };
                match pipeline::run_simulate(&config, &out_dir) {
                    Ok(_) => println!("simulated {} -> {}", config.display(), out_dir.display()),
                    Err(e) => failures.lock().expect("failure lock").push(e.into()),
                }
            });
        }
    });
    let mut failures = failures.into_inner().expect("failure lock");
    match failures.pop() {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { configs, out } => simulate(&configs, &out)?,
        Command::Analyze { sim, out } => {
            pipeline::run_analyze(&sim, &out)?;
            println!("analyzed {} -> {}", sim.display(), out.display());
        }
        Command::Fit { samples, model, out, seed } => {
            let kind: MfdKind = model.parse::<MfdKind>().map_err(anyhow::Error::from)?;
            let cfg = FitConfig { seed, ..FitConfig::default() };
            let report = pipeline::run_fit(&samples, kind, &cfg, &out)?;
            println!(
                "fit {model}: a={:.6e} rmsn={:.6e} -> {}",
                report.params.a,
                report.rmsn,
                out.display()
            );
        }
        Command::Report { analyses, out } => {
            pipeline::run_report(&analyses, &out)?;
            println!("report -> {}", out.display());
        }
        Command::Validate { network } => {
            let report = pipeline::run_validate(&network)?;
            if report.is_valid() {
                println!("network {} is valid", network.display());
            } else {
                for violation in &report.violations {
                    eprintln!(
                        "{}: {} ({:?})",
                        violation.entity, violation.message, violation.kind
                    );
                }
                return Err(Error::domain(format!(
                    "network has {} violations",
                    report.violations.len()
                ))
                .into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
