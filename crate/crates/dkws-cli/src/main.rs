//! Command-line pipeline for the keyword search engine: corpus synthesis,
//! training (monolingual, multilingual pretraining, finetuning), archive
//! indexing, search, TWV scoring, and hitlist fusion.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dkws", version, about = "End-to-end open-vocabulary keyword search")]
struct Cli {
    /// Cap on internal parallelism (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with exact alignments.
    Synth(commands::synth::SynthArgs),
    /// Train a model on one corpus with dev-set checkpoint selection.
    Train(commands::train::TrainArgs),
    /// Pretrain one shared model on several language corpora.
    Pretrain(commands::train::TrainArgs),
    /// Transfer a pretrained document encoder and train on a target corpus.
    Finetune(commands::train::TrainArgs),
    /// Encode an archive into a dense index.
    Index(commands::index::IndexArgs),
    /// Search a keyword list over an index.
    Search(commands::search::SearchArgs),
    /// Score a hitlist against references with the TWV metric family.
    Score(commands::score::ScoreArgs),
    /// Fuse two hitlists by weighted score summation.
    Fuse(commands::fuse::FuseArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    }
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(mut args) => {
            args.mode = commands::train::Mode::Train;
            commands::train::run(args)
        }
        Command::Pretrain(mut args) => {
            args.mode = commands::train::Mode::Pretrain;
            commands::train::run(args)
        }
        Command::Finetune(mut args) => {
            args.mode = commands::train::Mode::Finetune;
            commands::train::run(args)
        }
        Command::Index(args) => commands::index::run(args),
        Command::Search(args) => commands::search::run(args),
        Command::Score(args) => commands::score::run(args),
        Command::Fuse(args) => commands::fuse::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
