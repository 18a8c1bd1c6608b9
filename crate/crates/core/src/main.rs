use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mfboot::baselines::{
    ar_sieve_ci, ar_sieve_pi, block_bootstrap_ci, BlockConfig, DEFAULT_BLOCK_CONSTANT,
};
use mfboot::bootstrap::{run_ci, BootstrapConfig};
use mfboot::harness::{
    emit_report, generate_series, read_series, run_coverage, simulation_csv, ExperimentConfig,
    Method, ModelSpec, ReportFormat, Transfer,
};
use mfboot::prediction::{run_pi, Loss, PredictionConfig, PredictorKind, DEFAULT_DRAWS};
use mfboot::statistic::StatisticSpec;
use mfboot::transform::SeriesSample;
use mfboot::{BootError, Result};

#[derive(Parser)]
#[command(
    name = "mfboot",
    version,
    about = "Model-free bootstrap intervals for stationary time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one simulated path as CSV with columns t, W, Y.
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        transfer: Option<Transfer>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confidence interval for a statistic, printed as JSON.
    Ci {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        stat: StatisticSpec,
        #[arg(long = "B", default_value_t = 250)]
        replicates: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Block size for the block bootstrap (default ceil(1.5 n^(1/3))).
        #[arg(long)]
        block_size: Option<usize>,
    },
    /// Prediction interval for the next observation, printed as JSON.
    Pi {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value = "l2")]
        predictor: Loss,
        #[arg(long = "B", default_value_t = 250)]
        replicates: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_DRAWS)]
        draws: usize,
    },
    /// Run a coverage experiment described by a key-value config file.
    Coverage {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv", value_parser = parse_format)]
        format: ReportFormat,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Single-column CSV of observations.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    input: Option<PathBuf>,
    /// Simulate the data instead: a preset (1, 2, 3) or a model file.
    #[arg(long)]
    model: Option<String>,
    /// Length of the simulated series.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Seed of the simulated series (defaults to --seed).
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    transfer: Option<Transfer>,
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    s.parse().map_err(|e: BootError| e.to_string())
}

impl DataArgs {
    fn load(&self, seed: u64) -> Result<SeriesSample> {
        match (&self.input, &self.model) {
            (Some(path), _) => read_series(path),
            (None, Some(name)) => {
                let mut model = ModelSpec::resolve(name)?;
                if let Some(t) = self.transfer {
                    model = model.with_transfer(t);
                }
                generate_series(&model, self.n, self.data_seed.unwrap_or(seed))
            }
            (None, None) => Err(BootError::InvalidInput(
                "either --input or --model is required".into(),
            )),
        }
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| BootError::InvalidInput(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            model,
            n,
            seed,
            transfer,
            out,
        } => {
            let mut model = ModelSpec::resolve(&model)?;
            if let Some(t) = transfer {
                model = model.with_transfer(t);
            }
            fs::write(out, simulation_csv(&model, n, seed)?)?;
            Ok(())
        }
        Command::Ci {
            data,
            method,
            stat,
            replicates,
            alpha,
            seed,
            block_size,
        } => {
            let sample = data.load(seed)?;
            let ci = match method.model_free() {
                Some((variant, kind)) => {
                    run_ci(
                        &sample,
                        &stat,
                        &BootstrapConfig::new(variant, kind, replicates, alpha, seed),
                    )?
                    .0
                }
                None if method == Method::Bb => {
                    let mut blocks = BlockConfig::for_len(sample.len(), DEFAULT_BLOCK_CONSTANT);
                    if let Some(b) = block_size {
                        blocks.block_size = b;
                    }
                    block_bootstrap_ci(&sample, &stat, &blocks, replicates, alpha, seed)?.0
                }
                None => ar_sieve_ci(&sample, &stat, replicates, alpha, seed)?.0,
            };
            print_json(&ci)
        }
        Command::Pi {
            data,
            method,
            predictor,
            replicates,
            alpha,
            seed,
            draws,
        } => {
            let sample = data.load(seed)?;
            let pi = match method.model_free() {
                Some((variant, kind)) => {
                    let kind_cfg = PredictorKind::new(predictor, draws)?;
                    run_pi(
                        &sample,
                        &PredictionConfig::new(variant, kind, kind_cfg, replicates, alpha, seed),
                    )?
                    .0
                }
                None if method == Method::ArSieve => {
                    ar_sieve_pi(&sample, replicates, alpha, seed)?.0
                }
                None => {
                    return Err(BootError::InvalidInput(format!(
                        "{method} has no prediction interval"
                    )))
                }
            };
            print_json(&pi)
        }
        Command::Coverage {
            config,
            out,
            format,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let report = run_coverage(&cfg)?;
            emit_report(&report, format, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                BootError::InvalidInput(_) => 2,
                e if e.is_numerical() => 3,
                _ => 1,
            })
        }
    }
}
