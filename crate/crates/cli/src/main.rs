use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hnoma_core::benchmarks::Scheme;
use hnoma_core::harness::{all_infeasible, run_experiment, write_records, ExperimentConfig, Sweep};
use hnoma_core::semantic_model::{fit_logistic, read_samples};
use hnoma_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_INFEASIBLE: u8 = 3;

/// Power-minimization experiments for hybrid NOMA networks with semantic and bit users.
#[derive(Debug, Parser)]
#[command(name = "hnoma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One Monte-Carlo batch at the configured antenna and cluster counts.
    Single(RunArgs),
    /// Sweep the number of base-station antennas.
    SweepAntennas(RunArgs),
    /// Sweep the number of clusters.
    SweepClusters(RunArgs),
    /// Evaluate every symbol factor K separately.
    SweepK(RunArgs),
    /// Compare the coexisting network with one made only of bit users.
    BitCompare(RunArgs),
    /// Fit the logistic BLEU curve to a `snr_db,bleu` CSV file.
    FitLogistic {
        /// Input samples.
        samples: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated scheme names (proposed, oma, zf, mrt, ob_rb).
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Worker threads; 0 picks the machine default.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

enum Failure {
    Config(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::Config(e.into()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    cfg.load_registry()
        .map_err(|e| Failure::Config(anyhow::Error::from(e).context("loading the logistic registry")))?;
    Ok(cfg)
}

fn run(sweep: Sweep, args: RunArgs) -> Result<ExitCode, Failure> {
    let cfg = load_config(&args)?;
    let schemes = args.schemes.clone().unwrap_or_else(|| Scheme::ALL.to_vec());
    let records = run_experiment(&cfg, sweep, &schemes, args.workers).map_err(|e| match e {
        Error::Config(_) => Failure::Config(e.into()),
        e => Failure::Other(e.into()),
    })?;

    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    write_records(BufWriter::new(sink), &records).context("writing CSV")?;

    if all_infeasible(&records) {
        eprintln!("hnoma: every trial was infeasible");
        return Ok(ExitCode::from(EXIT_ALL_INFEASIBLE));
    }
    Ok(ExitCode::SUCCESS)
}

fn fit(samples: PathBuf) -> Result<ExitCode, Failure> {
    let data = read_samples(&samples).map_err(|e| Failure::Config(e.into()))?;
    let p = fit_logistic(&data).context("fitting the logistic curve")?;
    println!("a_k,l_k,x0_k");
    println!("{},{},{}", p.a_k, p.l_k, p.x0_k);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Single(a) => run(Sweep::Single, a),
        Command::SweepAntennas(a) => run(Sweep::Antennas, a),
        Command::SweepClusters(a) => run(Sweep::Clusters, a),
        Command::SweepK(a) => run(Sweep::SymbolFactor, a),
        Command::BitCompare(a) => run(Sweep::BitCompare, a),
        Command::FitLogistic { samples } => fit(samples),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("hnoma: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(e)) => {
            eprintln!("hnoma: {e:#}");
            ExitCode::FAILURE
        }
    }
}
