//! `semg`: synthetic corpora, training, distillation, personalization,
//! evaluation, grid sweeps, Pareto fronts and latency benchmarks.
//!
//! Every command exits 0 on success. Failures print one JSON object
//! `{"error": <kind>, "message": <text>}` to stderr and exit 1.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "semg", version, about = "Surface-EMG to text decoding experiments")]
#[command(after_help = "Config keys can be overridden with dotted flags, e.g. --train.peak_lr 1e-3")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArg {
    /// Experiment config (TOML with data/augment/model/loss/train sections).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and its split manifest into data.dataset_dir.
    Synth(ConfigArg),
    /// Supervised CTC training.
    Train(ConfigArg),
    /// Train a student against train.teacher_checkpoint.
    Distill(ConfigArg),
    /// Fine-tune train.init_checkpoint on data.user.
    Personalize(ConfigArg),
    /// Character error rate of a checkpoint on one split.
    Eval(commands::EvalArgs),
    /// Train selected architectures of the 4 × 5 grid and tabulate (params, cer).
    Grid(commands::GridArgs),
    /// Pareto-optimal subset of a params,cer,tag table.
    Pareto(commands::ParetoArgs),
    /// Single-window latency and naive streaming inference.
    Bench(commands::BenchArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let argv: Vec<String> = std::env::args().collect();
    let (argv, sets) = match overrides::extract(&argv) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", serde_json::json!({"error": "usage", "message": msg.trim()}));
            return ExitCode::FAILURE;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a, &sets),
        Command::Train(a) => commands::train_cmd(&a, &sets, commands::Flavor::Train),
        Command::Distill(a) => commands::train_cmd(&a, &sets, commands::Flavor::Distill),
        Command::Personalize(a) => commands::train_cmd(&a, &sets, commands::Flavor::Personalize),
        Command::Eval(a) => commands::eval(&a, &sets),
        Command::Grid(a) => commands::grid(&a, &sets),
        Command::Pareto(a) => commands::pareto(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &semg::Error) -> ExitCode {
    eprintln!("{}", serde_json::json!({"error": e.kind(), "message": e.to_string()}));
    ExitCode::FAILURE
}
