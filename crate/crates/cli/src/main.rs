//! `sqgen`: vocabulary, preprocessing, training, generation and evaluation
//! for answer-tagged question generation.

mod commands;
mod error;
mod io;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{data, eval, generate, qa, train};
use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sqgen", version, about = "Answer-tagged question generation and QA-based evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a subword vocabulary.
    BuildVocab(data::BuildVocabArgs),
    /// Filter and tokenize raw records into prepared JSONL.
    Prepare(data::PrepareArgs),
    /// Print example and context counts of a prepared file.
    Stats(data::StatsArgs),
    /// Shuffle a prepared file into train and dev parts.
    Split(data::SplitArgs),
    /// Train the question generator.
    Train(train::TrainArgs),
    /// Generate one question per prepared example.
    Generate(generate::GenerateArgs),
    /// Score generated questions or human annotations.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
    /// Train the joint QA model used for answerability scoring.
    TrainQa(qa::TrainQaArgs),
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("SQGEN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("SQGEN_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::BuildVocab(a) => data::build_vocab(&a),
        Command::Prepare(a) => data::prepare(&a),
        Command::Stats(a) => data::stats(&a),
        Command::Split(a) => data::split(&a),
        Command::Train(a) => train::train(&a),
        Command::Generate(a) => generate::generate(&a),
        Command::Eval(c) => eval::eval(&c),
        Command::TrainQa(a) => qa::train_qa(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
