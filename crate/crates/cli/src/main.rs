//! Command-line entry point wiring data generation, graph construction,
//! training, evaluation, gradient checking and label propagation into
//! reproducible workflows. Every command is deterministic given its flags
//! and seed.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use graphemb::error::Error;
use std::process::ExitCode;

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  runtime error (invalid input, I/O)
  2  usage error
  3  file parse error
  4  schema error (dimension or format mismatch)
  5  training diverged
  6  gradient check failed";

#[derive(Parser)]
#[command(
    name = "graphemb",
    version,
    about = "Graph-regularized embedding training, graph construction and evaluation",
    after_help = EXIT_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset, click logs, and evaluation files.
    GenData(commands::gen_data::Args),
    /// Build a similarity graph from a click log.
    BuildGraph(commands::build_graph::Args),
    /// Train the embedding model.
    Train(commands::train::Args),
    /// Evaluate a checkpoint with kNN top-k and triplet protocols.
    Eval(commands::eval::Args),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(commands::gradcheck::Args),
    /// Run label propagation over a similarity graph.
    LabelProp(commands::label_prop::Args),
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Parse { .. } => 3,
        Error::Schema(_) => 4,
        Error::Diverged(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(&args),
        Command::BuildGraph(args) => commands::build_graph::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Gradcheck(args) => commands::gradcheck::run(&args),
        Command::LabelProp(args) => commands::label_prop::run(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
