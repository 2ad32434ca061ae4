//! `fde`: build target-centric depth benchmarks, score predictions, and run
//! the kernel self-checks.

mod aggregate;
mod build;
mod evaluate;
mod jsonl;
mod kernel_check;
mod predictions;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "fde", version, about = "Target-centric monocular depth benchmark toolkit")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a triplet manifest from RGB-D sources with instance maps.
    Build(build::BuildArgs),
    /// Score predictions against a manifest and write a results file.
    Evaluate(evaluate::EvaluateArgs),
    /// Aggregate one or more results files into per-region statistics.
    Aggregate(aggregate::AggregateArgs),
    /// Render aggregated statistics as a Markdown or CSV table.
    Report(aggregate::ReportArgs),
    /// Run the gradient checks and oracle suites.
    KernelCheck(kernel_check::KernelCheckArgs),
}

fn main() -> ExitCode {
    // Usage errors exit with status 2 from inside `parse`.
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Build(args) => build::run(args),
        Command::Evaluate(args) => evaluate::run(args),
        Command::Aggregate(args) => aggregate::run_aggregate(args),
        Command::Report(args) => aggregate::run_report(args),
        Command::KernelCheck(args) => kernel_check::run(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
