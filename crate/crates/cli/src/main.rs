//! `scrutable`: the pipeline from raw reviews to a served, editable profile model.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "scrutable", version, about = "Scrutable recommendation from natural-language user profiles")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for artifacts (default: the config's `output`, else ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the split, review sampling and models.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More logging; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic review corpus.
    Synth(commands::SynthArgs),
    /// Validate a JSONL or CSV review dump and store it as canonical JSONL.
    Ingest(commands::IngestArgs),
    /// Per-user train/validation/test split with warm-start items.
    Split(commands::SplitArgs),
    /// Rank each train user's features by utility.
    Rank(commands::RankArgs),
    /// Generate a profile for every train user.
    GenProfiles,
    /// Edit one user's profile toward liking (or not liking) a feature.
    EditProfile(commands::EditArgs),
    /// Fit rating models and save checkpoints.
    Train(commands::TrainArgs),
    /// Score saved models on the test split.
    Evaluate,
    /// Measure how recommendations follow profile edits.
    Scrutinize(commands::ScrutinizeArgs),
    /// Error of the profile model against the number of profile features.
    Ablate,
    /// Serve the profile API.
    Serve(commands::ServeArgs),
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok());
    if let Some(seed) = cli.global.seed {
        config.apply_seed(seed);
    }
    config.validate()?;
    let out = cli
        .global
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = commands::Context::new(config, out, cli.global.seed)?;
    match cli.command {
        Command::Synth(a) => ctx.synth(a),
        Command::Ingest(a) => ctx.ingest(a),
        Command::Split(a) => ctx.split(a),
        Command::Rank(a) => ctx.rank(a),
        Command::GenProfiles => ctx.gen_profiles(),
        Command::EditProfile(a) => ctx.edit_profile(a),
        Command::Train(a) => ctx.train(a),
        Command::Evaluate => ctx.evaluate(),
        Command::Scrutinize(a) => ctx.scrutinize(a),
        Command::Ablate => ctx.ablate(),
        Command::Serve(a) => ctx.serve(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
