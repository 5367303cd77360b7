//! Batch front end: ingest, fit, score, poststratify, cluster and report from
//! one configuration file.

pub mod artifact;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod simulate;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use mrp_core::rng::Seed;
use mrp_core::schema::CategoricalSchema;

use config::{Overrides, RunConfig};
use error::{CliError, Result};
use simulate::{Kind, SimulateOptions};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "MRP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mrp", version, about = "Multilevel regression and poststratification for survey data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit every configured event and model; store posteriors under fit/.
    Fit(RunArgs),
    /// Results tables, marginal panels and scores from stored posteriors.
    Report(RunArgs),
    /// MLIK, WAIC and MBRIER of stored posteriors.
    Scores(RunArgs),
    /// Latent class segmentation of the merged training set.
    Cluster(RunArgs),
    /// Write a synthetic corpus (surveys, census and true shares).
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Posterior draws S.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Hyperparameter integration: grid or eb.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Quantile level of MBRIER.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated event names.
    #[arg(long, value_delimiter = ',')]
    pub events: Option<Vec<String>>,
    /// Comma-separated model variants (I, II, III).
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Output directory.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Official results CSV (`event,official`).
    #[arg(long)]
    pub official: Option<PathBuf>,
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            draws: self.draws,
            strategy: self.strategy.clone(),
            alpha: self.alpha,
            events: self.events.clone(),
            variants: self.variants.clone(),
            k_max: self.k_max,
            output: self.output.clone(),
            official: self.official.clone(),
        }
    }

    pub fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides())
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory receiving the corpus.
    #[arg(short, long)]
    pub output: PathBuf,
    /// truth (regression prior, biased messenger channel) or segments
    /// (three planted latent classes).
    #[arg(long, default_value = "truth")]
    pub kind: String,
    #[arg(long, default_value_t = 2020)]
    pub seed: u64,
    #[arg(long, default_value_t = 20_000)]
    pub viber_rows: usize,
    #[arg(long, default_value_t = 1_150)]
    pub street_rows: usize,
    #[arg(long, default_value_t = 7_000_000.0)]
    pub population: f64,
    /// Schema file; the built-in Belarus schema when omitted.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn options(&self) -> Result<SimulateOptions> {
        let schema = match &self.schema {
            Some(p) => CategoricalSchema::load(p).map_err(CliError::config)?,
            None => CategoricalSchema::belarus(),
        };
        if !(self.population >= 1.0) {
            return Err(CliError::config("population must be at least 1"));
        }
        Ok(SimulateOptions {
            kind: self.kind.parse::<Kind>()?,
            seed: Seed(self.seed),
            viber_rows: self.viber_rows,
            street_rows: self.street_rows,
            population: self.population,
            schema,
            schema_path: self.schema.clone(),
        })
    }
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => {
            let files = pipeline::cmd_fit(&a.load()?)?;
            log::info!("wrote {} posterior files", files.len());
        }
        Command::Report(a) => pipeline::cmd_report(&a.load()?)?,
        Command::Scores(a) => {
            pipeline::cmd_scores(&a.load()?)?;
        }
        Command::Cluster(a) => {
            let out = pipeline::cmd_cluster(&a.load()?)?;
            log::info!("selected {} clusters, sizes {:?}", out.selected, out.sizes);
        }
        Command::Simulate(a) => simulate::cmd_simulate(&a.options()?, &a.output)?,
    }
    Ok(())
}
