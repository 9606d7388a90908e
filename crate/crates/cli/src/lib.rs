//! Configuration-driven experiment runner for `belstable-core`.

pub mod commands;
pub mod compare;
pub mod config;
pub mod error;
pub mod models;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "belstable", version, about = "Monte Carlo experiments for stable-driven SDEs and SPDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory for CSV artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    SampleSubordinator(RunArgs),
    LaplaceCheck(RunArgs),
    SimulateSde(RunArgs),
    EstimateGradient(RunArgs),
    FdOracle(RunArgs),
    GradientScaling(RunArgs),
    TailCheck(RunArgs),
    SpdeConvolution(RunArgs),
    SpdeSolve(RunArgs),
    SpdeGap(RunArgs),
    GalerkinCauchy(RunArgs),
    TimechangeDemo(RunArgs),
    /// Row-wise z-scores of the `value` columns of two artifacts.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
    },
}

pub fn load_config(args: &RunArgs) -> CliResult<Config> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = Config::parse(&text)?;
    if let Some(s) = args.seed {
        cfg.set("seed", s.to_string());
    }
    Ok(cfg)
}

fn write_artifacts(out: &Path, cfg: &Config, artifacts: commands::Artifacts) -> CliResult<Vec<PathBuf>> {
    let seed = models::seed(cfg)?;
    let hash = cfg.hash();
    artifacts
        .into_iter()
        .map(|(name, table)| output::write(out, &name, &table.render(seed, &hash)))
        .collect()
}

/// Runs one command. Returns the written paths, or for `compare` the report text.
pub fn run(cli: Cli) -> CliResult<String> {
    if let Some(n) = cli.workers {
        if n < 1 {
            return Err(CliError::field("--workers", "must be at least 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let runner: fn(&Config) -> CliResult<commands::Artifacts> = match &cli.command {
        Command::SampleSubordinator(_) => commands::sample_subordinator,
        Command::LaplaceCheck(_) => commands::laplace_check,
        Command::SimulateSde(_) => commands::simulate_sde,
        Command::EstimateGradient(_) => commands::estimate_gradient,
        Command::FdOracle(_) => commands::fd_oracle_cmd,
        Command::GradientScaling(_) => commands::gradient_scaling,
        Command::TailCheck(_) => commands::tail_check,
        Command::SpdeConvolution(_) => commands::spde_convolution,
        Command::SpdeSolve(_) => commands::spde_solve,
        Command::SpdeGap(_) => commands::spde_gap,
        Command::GalerkinCauchy(_) => commands::galerkin_cauchy,
        Command::TimechangeDemo(_) => commands::timechange_demo,
        Command::Compare { a, b, threshold } => {
            let a = compare::Artifact::parse(&std::fs::read_to_string(a)?)?;
            let b = compare::Artifact::parse(&std::fs::read_to_string(b)?)?;
            let report = compare::compare(&a, &b, *threshold)?;
            let failed = report.failures();
            if failed > 0 {
                print!("{}", report.render());
                return Err(CliError::CompareFailed {
                    failed,
                    rows: report.rows.len(),
                    threshold: *threshold,
                });
            }
            return Ok(report.render());
        }
    };
    let args = match &cli.command {
        Command::SampleSubordinator(a)
        | Command::LaplaceCheck(a)
        | Command::SimulateSde(a)
        | Command::EstimateGradient(a)
        | Command::FdOracle(a)
        | Command::GradientScaling(a)
        | Command::TailCheck(a)
        | Command::SpdeConvolution(a)
        | Command::SpdeSolve(a)
        | Command::SpdeGap(a)
        | Command::GalerkinCauchy(a)
        | Command::TimechangeDemo(a) => a,
        Command::Compare { .. } => unreachable!("handled above"),
    };
    let cfg = load_config(args)?;
    let written = write_artifacts(&cli.out, &cfg, runner(&cfg)?)?;
    Ok(written
        .iter()
        .map(|p| format!("wrote {}\n", p.display()))
        .collect())
}
