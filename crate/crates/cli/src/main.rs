//! `spillover` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 bad input data/spec/config,
//! 3 runtime failure (divergence, failed gradient check, ...).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "spillover", version, about = "Stock movement prediction over a market knowledge graph")]
struct Cli {
    /// Worker threads for inference-only scoring.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with a planted spillover signal.
    GenerateData(GenerateArgs),
    /// Train a model and write a checkpoint plus training history.
    Train(TrainArgs),
    /// Classification metrics of a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Top-k daily portfolio backtest over the test split.
    Backtest(BacktestArgs),
    /// Finite-difference check of every parameter gradient.
    Gradcheck(GradcheckArgs),
    /// List one day's implicit edges with their scores.
    DumpImplicit(DumpArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML generator spec; defaults apply to missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// TOML training config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; the history goes next to it as `<stem>.history.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Independent runs with seeds `seed, seed+1, ...`; reports mean ± std.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Comma-separated components to disable: executives, implicit,
    /// explicit, dual.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Metrics table to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BacktestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 15)]
    topk: usize,
    /// Proportional cost charged on each day's value.
    #[arg(long, default_value_t = 0.0003)]
    cost: f64,
    #[arg(long, default_value_t = 10000.0)]
    budget: f64,
    /// Annual risk-free rate for the Sharpe ratio.
    #[arg(long, default_value_t = 0.015)]
    risk_free: f64,
    /// Directory for the report files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Instance size; only `small` (3 stocks, 2 executives) exists.
    #[arg(long, default_value = "small")]
    size: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale the backward rule of one operation (test fixture).
    #[arg(long, hide = true)]
    corrupt_rule: Option<String>,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trading day, YYYY-MM-DD.
    #[arg(long)]
    day: String,
    /// Overrides the checkpoint's threshold (`inf` and `-inf` allowed).
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
    /// CSV to write.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let threads = cli.threads.max(1);
    let result = match cli.command {
        Command::GenerateData(a) => commands::generate(a),
        Command::Train(a) => commands::train(a, threads),
        Command::Evaluate(a) => commands::evaluate(a, threads),
        Command::Backtest(a) => commands::backtest(a, threads),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::DumpImplicit(a) => commands::dump_implicit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.error);
            ExitCode::from(e.code)
        }
    }
}
