//! `odtr` command-line entry point.
//!
//! Every command reads an optional JSON run config, applies flag overrides,
//! and writes JSON (plus CSV for `simulate`) that embeds the resolved config.
//! Failures print `{"error": {"kind", "message"}}` to stderr and exit with 1.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odtr::Direction;

#[derive(Debug, Parser)]
#[command(name = "odtr", version, about = "Learn and evaluate optimal dynamic treatment rules")]
struct Cli {
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the two-stage simulation study and write summary tables.
    Simulate(SimulateArgs),
    /// Draw one dataset from the simulation model as CSV plus schema.
    Generate(GenerateArgs),
    /// Learn a rule from data by backward induction.
    Learn(LearnArgs),
    /// Estimate the value of one rule.
    Evaluate(EvaluateArgs),
    /// Compare rules against a reference rule on the ratio and difference scales.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (file, or directory for `simulate` and `generate`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Wide CSV, one row per unit.
    #[arg(long)]
    data: PathBuf,
    /// JSON column-role map, optionally with `rule_covariates`.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Sample size; repeat for several.
    #[arg(long)]
    n: Vec<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: usize,
}

#[derive(Debug, Args)]
struct LearnArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// `static:0`, `static:1`, `observed`, `learned`, or a rule JSON file.
    #[arg(long)]
    rule: String,
    #[arg(long)]
    alpha: Option<f64>,
    /// Direction used when the rule is `learned`.
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Rules to compare, in the `--rule` format.
    #[arg(long, num_args = 1.., required = true)]
    rules: Vec<String>,
    #[arg(long)]
    reference: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: odtr::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::init_threads(cli.threads).and_then(|()| match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Generate(args) => commands::generate(args),
        Command::Learn(args) => commands::learn(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Compare(args) => commands::compare(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
