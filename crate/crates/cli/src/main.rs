use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use transq::airy::AiryEvaluator;
use transq::experiment::{self, Experiment, ExperimentConfig};
use transq::Error;

/// Transitory single-server queues in heavy traffic: busy-period tables,
/// density and path comparisons against the diffusion limit, invariant checks.
#[derive(Debug, Parser)]
#[command(name = "transq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean scaled busy period, exponential clocks, with the limit row.
    Table2(Common),
    /// Mean scaled busy period, hyperexponential clocks, with the limit row.
    Table3(Common),
    /// Mean scaled busy period, half-normal clocks (second-order contact).
    Table4(Common),
    /// Kernel density of scaled busy periods against the limit density.
    Density(Common),
    /// Rescaled queue paths against the reflected limit diffusion.
    Paths(Common),
    /// Run every invariant suite; exit code 1 if any check fails.
    Validate(Common),
    /// Write `x,Ai,Bi,Ai',Bi'` on a grid.
    AiryDump(AiryArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; the built-in preset is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per cell (overrides the config).
    #[arg(long)]
    reps: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct AiryArgs {
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Override the series/asymptotic switch point (debugging only).
    #[arg(long)]
    branch_point: Option<f64>,
    /// Output directory; the file is `airy.csv`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

enum Failure {
    Validation(String),
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(which: Experiment, common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(which),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = common.reps {
        cfg.replications = reps;
    }
    if let Some(out) = &common.out {
        cfg.outputs = out.clone();
    }
    cfg.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(cfg)
}

fn print<T: Serialize>(report: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Table2(c) => print(&experiment::run_table(&load(Experiment::Table2, &c)?, Experiment::Table2)?),
        Command::Table3(c) => print(&experiment::run_table(&load(Experiment::Table3, &c)?, Experiment::Table3)?),
        Command::Table4(c) => print(&experiment::run_table(&load(Experiment::Table4, &c)?, Experiment::Table4)?),
        Command::Density(c) => print(&experiment::run_density(&load(Experiment::Density, &c)?)?),
        Command::Paths(c) => print(&experiment::run_paths(&load(Experiment::Paths, &c)?)?),
        Command::Validate(c) => {
            let report = experiment::run_validate(&load(Experiment::Validate, &c)?)?;
            print(&report)?;
            let failed: Vec<&str> = report.failures().map(|f| f.name.as_str()).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Validation(format!("failed checks: {}", failed.join(", "))))
            }
        }
        Command::AiryDump(a) => {
            let eval = a
                .branch_point
                .map_or_else(AiryEvaluator::default, AiryEvaluator::with_branch_point);
            let rows = experiment::airy_table(&eval, a.from, a.to, a.step).map_err(|e| Failure::Config(e.to_string()))?;
            let path = a.out.join("airy.csv");
            experiment::write_airy_csv(&rows, &experiment::header_line(None), &path)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) | Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
