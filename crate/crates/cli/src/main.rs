use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reparam_cli::commands::{converge_cmd, default_out, evaluate_cmd, sample_cmd, train_pdf_cmd, train_sampler_cmd};
use reparam_cli::{exit_code, ExperimentConfig, THREADS_ENV};
use reparam_core::{Error, Result};

/// Train and evaluate learned reparameterization samplers.
#[derive(Parser)]
#[command(name = "reparam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a sampler network on the configured target.
    TrainSampler {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a pdf network to a trained sampler.
    TrainPdf {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sampler: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples from a sampler model as CSV.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Outgoing direction `x,y` for conditional models.
        #[arg(long, value_parser = parse_cond, allow_hyphen_values = true)]
        cond: Option<[f64; 2]>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report KL, coverage, injectivity and estimator checks as JSON.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pdf: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for `report.json` and histogram CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MSE-versus-spp curves and their log-log slopes.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pdf: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also record wall-clock seconds (makes the CSVs non-reproducible).
        #[arg(long)]
        timings: bool,
    },
}

fn parse_cond(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected `x,y`".into());
    }
    let x = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let y = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([x, y])
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(THREADS_ENV, e.to_string()))
}

fn run(cli: Cli) -> Result<String> {
    init_threads()?;
    match cli.command {
        Command::TrainSampler { config, seed, out } => {
            let cfg = ExperimentConfig::load(&config, seed)?;
            train_sampler_cmd(&cfg, &out.unwrap_or_else(default_out))
        }
        Command::TrainPdf { config, sampler, seed, out } => {
            let cfg = ExperimentConfig::load(&config, seed)?;
            train_pdf_cmd(&cfg, &sampler, &out.unwrap_or_else(default_out))
        }
        Command::Sample { model, n, cond, seed, out } => sample_cmd(&model, cond, n, seed, out.as_deref()),
        Command::Evaluate { config, model, pdf, seed, out } => {
            let cfg = ExperimentConfig::load(&config, seed)?;
            evaluate_cmd(&cfg, &model, pdf.as_deref(), out.as_deref())
        }
        Command::Converge { config, model, pdf, seed, out, timings } => {
            let cfg = ExperimentConfig::load(&config, seed)?;
            converge_cmd(&cfg, &model, pdf.as_deref(), &out.unwrap_or_else(default_out), timings)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
