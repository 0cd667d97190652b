//! `smartkde` command-line front end.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smartkde::dataio::parse_timestamp;
use smartkde::Criterion;

use crate::commands::{cmd_calibrate, cmd_evaluate, cmd_forecast, cmd_tariff, cmd_validate, Overrides};
use crate::config::{parse_methods, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "smartkde", version, about = "Density forecasting and tariff simulation for smart meter data")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (flat `key = value` file).
    #[arg(long, global = true, default_value = "smartkde.conf")]
    config: PathBuf,

    /// Comma-separated methods, e.g. `KD-IC,CKD-IC,HWT` or `all`.
    #[arg(long, global = true)]
    methods: Option<String>,

    /// Restrict the run to one meter.
    #[arg(long, global = true)]
    meter: Option<String>,

    /// Forecast origin: the last observed half-hour, `YYYY-MM-DDTHH:MM`.
    #[arg(long, global = true)]
    origin: Option<String>,

    #[arg(long, global = true, value_parser = ["mean", "q75", "q95"])]
    criterion: Option<String>,

    /// Worker threads for per-meter work.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Report meters rejected for gaps or duplicates; exits 1 if any.
    Validate,
    /// Fit and pool per-category parameters.
    Calibrate,
    /// Export densities and a fan chart for one meter and origin.
    Forecast,
    /// Rolling-origin post-sample evaluation.
    Evaluate,
    /// Weekly tariff-switching study.
    Tariff,
}

fn overrides(cli: &Cli) -> CliResult<Overrides> {
    Ok(Overrides {
        methods: cli.methods.as_deref().map(parse_methods).transpose()?,
        meter: cli.meter.clone(),
        origin: cli
            .origin
            .as_deref()
            .map(|o| parse_timestamp(o).ok_or_else(|| CliError::Usage(format!("bad --origin {o:?}"))))
            .transpose()?,
        criterion: cli.criterion.as_deref().map(str::parse::<Criterion>).transpose()?,
    })
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers.or(config.workers) {
        if workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let overrides = overrides(&cli)?;
    match cli.command {
        Command::Validate => {
            let report = cmd_validate(&config)?;
            for (line, reason) in &report.dropped_rows {
                eprintln!("dropped row at line {line}: {reason}");
            }
            for (meter, reason) in &report.rejected_meters {
                println!("rejected {meter}: {reason}");
            }
            if !report.rejected_meters.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Calibrate => {
            let run = cmd_calibrate(&config, &overrides)?;
            for (key, reason) in &run.failures {
                eprintln!("category {key} not calibrated: {reason}");
            }
            println!("calibrated {} categories into {}", run.categories.len(), config.params.display());
        }
        Command::Forecast => {
            let files = cmd_forecast(&config, &overrides)?;
            for path in files.densities.iter().chain(&files.fan_charts) {
                println!("wrote {}", path.display());
            }
        }
        Command::Evaluate => {
            let run = cmd_evaluate(&config, &overrides)?;
            for (meter, reason) in &run.failures {
                eprintln!("meter {meter} excluded: {reason}");
            }
            for (model, crps) in &run.overall {
                println!("{model}: mean CRPS {crps:.6} over {} meters", run.meters.len());
            }
        }
        Command::Tariff => {
            let run = cmd_tariff(&config, &overrides)?;
            for (meter, reason) in &run.excluded {
                eprintln!("meter {meter} excluded: {reason}");
            }
            let s = &run.summary;
            println!(
                "criterion={} meters={} switching_cheaper={:.1}% allocated_cheaper={:.1}% no_difference={:.1}% average_saving={:.2}",
                run.criterion,
                s.meters,
                s.switching_cheaper_pct,
                s.allocated_cheaper_pct,
                s.no_difference_pct,
                s.average_saving
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
