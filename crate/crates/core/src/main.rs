use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use profilerec::config::{RunConfig, WORKDIR_ENV};
use profilerec::pipeline::{Pipeline, Stage};
use profilerec::synthetic::{self, SynthConfig};
use profilerec::Error;

/// Review-based reader profiles and a two-tower book recommender.
///
/// Stages hand off through files in the work directory:
/// preprocess → profile → train-mf → sample → train → eval → report.
#[derive(Parser)]
#[command(name = "profilerec", version, after_help = format!(
    "The work directory from the config can be overridden with the {WORKDIR_ENV} environment variable.\n\
     RUST_LOG controls log verbosity (default: info)."
))]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "profilerec.toml")]
    config: PathBuf,

    /// Overrides the root seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the worker thread count of the config.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter, slice and split the corpus.
    Preprocess,
    /// Build user and item profiles.
    Profile,
    /// Train the matrix factorization model.
    TrainMf,
    /// Sample training negatives.
    Sample,
    /// Train the two-tower model.
    Train,
    /// Rank test candidates.
    Eval,
    /// Aggregate evaluation records into the report.
    Report,
    /// Run every stage in order.
    All,
    /// Run a single stage by name.
    Run {
        #[arg(long)]
        stage: String,
    },
    /// Write a planted-topic synthetic corpus.
    Synth {
        /// Output directory for interactions.jsonl and items.jsonl.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 2000)]
        items: usize,
        #[arg(long, default_value_t = 10)]
        topics: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact { .. } => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let stage = match &cli.command {
        Command::Synth {
            out,
            users,
            items,
            topics,
        } => {
            let cfg = SynthConfig {
                users: *users,
                items: *items,
                topics: *topics,
                seed: cli.seed.unwrap_or(SynthConfig::default().seed),
                ..SynthConfig::default()
            };
            return synthetic::generate(&cfg)?.write(out);
        }
        Command::Preprocess => Some(Stage::Preprocess),
        Command::Profile => Some(Stage::Profile),
        Command::TrainMf => Some(Stage::TrainMf),
        Command::Sample => Some(Stage::Sample),
        Command::Train => Some(Stage::Train),
        Command::Eval => Some(Stage::Eval),
        Command::Report => Some(Stage::Report),
        Command::Run { stage } => Some(stage.parse()?),
        Command::All => None,
    };
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    config.validate()?;
    let pipeline = Pipeline::new(config)?;
    match stage {
        Some(s) => pipeline.run_stage(s),
        None => pipeline.run_all(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
