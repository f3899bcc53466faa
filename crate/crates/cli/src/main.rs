//! `divens`: experiment recipes over the ensemble-diversity library.
//! Every subcommand reads/writes the library's file formats and prints a
//! machine-readable JSON summary to stdout (suppress with --quiet).

mod commands;

use clap::{Parser, Subcommand};
use divens_core::Error;

#[derive(Parser)]
#[command(name = "divens", version, about = "Ensemble diversity experiments")]
struct Cli {
    /// Suppress the JSON summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus.
    Synth(commands::synth::Args),
    /// Pool frame sequences into fixed-size video features.
    Pool(commands::pool::Args),
    /// Train one network and save checkpoints plus history.
    Train(commands::train::Args),
    /// Run a saved checkpoint over features.
    Predict(commands::predict::Args),
    /// Score predictions against labels.
    Gap(commands::gap::Args),
    /// Average prediction matrices into one.
    Ensemble(commands::ensemble::Args),
    /// Sweep the blend weight between two prediction matrices.
    Sweep(commands::sweep::Args),
    /// Pairwise prediction diversity, optionally against ensemble gain.
    Diversity(commands::diversity::Args),
    /// Wrong-example-set trajectory as members accumulate.
    Wrongsets(commands::wrongsets::Args),
    /// Error-histogram migration from a base to an extended ensemble.
    Histshift(commands::histshift::Args),
    /// Sequentially build an ensemble with the diversity-aware loss.
    Seqbuild(commands::seqbuild::Args),
}

fn configure_threads() -> divens_core::Result<()> {
    let Some(raw) = std::env::var_os("DIVENS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .to_string_lossy()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("DIVENS_THREADS={raw:?} is not a number")))?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> divens_core::Result<serde_json::Value> {
    match &cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Pool(args) => commands::pool::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Predict(args) => commands::predict::run(args),
        Command::Gap(args) => commands::gap::run(args),
        Command::Ensemble(args) => commands::ensemble::run(args),
        Command::Sweep(args) => commands::sweep::run(args),
        Command::Diversity(args) => commands::diversity::run(args),
        Command::Wrongsets(args) => commands::wrongsets::run(args),
        Command::Histshift(args) => commands::histshift::run(args),
        Command::Seqbuild(args) => commands::seqbuild::run(args),
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DimensionMismatch(_) => 2,
        Error::Diverged { .. } | Error::DivergedGradient => 3,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("divens: {e}");
        std::process::exit(1);
    }
    match run(&cli) {
        Ok(summary) => {
            if !cli.quiet {
                println!("{summary}");
            }
        }
        Err(e) => {
            eprintln!("divens: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
