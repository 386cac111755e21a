use std::path::PathBuf;
use std::process::ExitCode;

use alsim_core::harness::{self, ExperimentConfig, PoolSource, Problem};
use alsim_core::{curve_points, fit_power_law, generate_pool, load_metrics, save_fits, save_pool};
use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

/// Active-learning and crowd-labeling simulator.
#[derive(Parser)]
#[command(name = "alsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Check a config file and list every problem.
    Validate { config: PathBuf },
    /// Write the synthetic pool a config describes.
    Synth {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Generate the pool a run with this seed would see.
        #[arg(long)]
        run_seed: Option<u64>,
    },
    /// Fit a power-law learning curve to a metrics CSV.
    Fit {
        metrics: PathBuf,
        #[arg(long, default_value = "accuracy")]
        metric: String,
        /// Only use rows of this strategy.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn load(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).map_err(|p| anyhow::anyhow!("{}: {p}", path.display()))
}

fn report(problems: &[Problem]) {
    for p in problems {
        eprintln!("error: {p}");
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Validate { config } => {
            let problems = harness::validate(&load(&config)?);
            if problems.is_empty() {
                println!("ok");
                Ok(ExitCode::SUCCESS)
            } else {
                report(&problems);
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Run { config } => {
            let cfg = load(&config)?;
            let problems = harness::validate(&cfg);
            if !problems.is_empty() {
                report(&problems);
                return Ok(ExitCode::FAILURE);
            }
            let summary = harness::run(&cfg)?;
            for f in &summary.files {
                println!("{}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            config,
            output,
            run_seed,
        } => {
            let cfg = load(&config)?;
            let pool = match (&cfg.pool_source, run_seed) {
                (Some(source @ PoolSource::Synth(_)), Some(seed)) => harness::build_pool(source, seed)?,
                (Some(PoolSource::Synth(s)), None) => generate_pool(s)?,
                _ => bail!("pool_source: `synth` requires a synth pool source"),
            };
            save_pool(&pool, &output).with_context(|| format!("writing {}", output.display()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit {
            metrics,
            metric,
            strategy,
            output,
        } => {
            let records = load_metrics(&metrics)?;
            let points = curve_points(&records, &metric, strategy.as_deref());
            if points.is_empty() {
                bail!("{}: no rows for metric `{metric}`", metrics.display());
            }
            let curve = fit_power_law(&points).with_context(|| format!("fitting `{metric}`"))?;
            save_fits(&[(metric, curve)], &output)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
