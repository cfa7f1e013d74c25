//! `tracegroup` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tracegroup::Error),
    #[error("i/o error on {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown scorer `{0}` (expected baseline, aggregation or knn)")]
    UnknownScorer(String),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Exit status per error class. Clap reports usage errors with 2.
    fn exit_code(&self) -> u8 {
        use tracegroup::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(..) | CliError::Csv(_) | CliError::Core(E::Io { .. }) => 3,
            CliError::Core(
                E::Parse { .. }
                | E::InvalidFrame(_)
                | E::EmptyFrames(_)
                | E::DuplicateReport(_)
                | E::Unlabeled(_)
                | E::Model(_),
            ) => 4,
            CliError::UnknownScorer(_) | CliError::Core(E::UnknownModel(_) | E::UnknownKernel(_)) => 5,
            CliError::Core(E::SchemaVersion { .. }) => 6,
            CliError::Core(E::ModelMismatch { .. }) => 7,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tracegroup", version, about = "Crash-report deduplication by group-level similarity aggregation")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Applied after --config.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    splits: Option<PathBuf>,
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// tfidf, modani-edit, modani-lcs, modani-prefix or durfex.
    #[arg(long, global = true)]
    similarity: Option<String>,
    /// baseline, aggregation or knn.
    #[arg(long, global = true)]
    scorer: Option<String>,
    /// Filtration size; 0 disables filtration.
    #[arg(short = 'N', long, global = true)]
    filtration: Option<usize>,
    #[arg(long, global = true)]
    staleness_days: Option<i64>,
    /// Kernel name or adjusted_weighting.
    #[arg(long, global = true)]
    knn: Option<String>,
    #[arg(short = 'k', long = "k", global = true)]
    knn_k: Option<usize>,
    #[arg(long, global = true)]
    top: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core. Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset to `dataset`.
    Generate,
    /// Cut `dataset` into train_sim, train_agg, validation and test spans.
    Split,
    /// Fit the similarity model and train the aggregator; writes the model file.
    Train,
    /// Replay the test span and write a metric report.
    Eval,
    /// Print the top groups of `store` for one report line ("-" reads stdin).
    Rank { query: String },
    /// Grid-search k-NN configurations on the validation span.
    Grid,
    /// Write the trained model's coefficient table.
    Coeffs,
    /// Print the effective configuration.
    Config,
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            c.set(kv)?;
        }
        macro_rules! flag {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone();
                }
            )*};
        }
        flag!(out, similarity, scorer, filtration, staleness_days, knn, knn_k, top, seed, workers);
        macro_rules! path_flag {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    c.$field = self.$field.clone();
                }
            )*};
        }
        path_flag!(dataset, splits, store, model);
        Ok(c)
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = cli.run_config()?;
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Generate => commands::generate(&config),
        Command::Split => commands::split(&config),
        Command::Train => commands::train(&config),
        Command::Eval => commands::eval(&config),
        Command::Rank { query } => commands::rank(&config, query),
        Command::Grid => commands::grid(&config),
        Command::Coeffs => commands::coeffs(&config),
        Command::Config => {
            print!("{}", config.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tracegroup: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
