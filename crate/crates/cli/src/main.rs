//! `qreduce`: generate synthetic logs, train the two scoring heads, evaluate
//! reducers and reduce single queries.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "qreduce", version, about = "Query reduction from search logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in defaults: `synthetic` (default) or `paper`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any configuration key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic log as train/valid/test TSV files plus a manifest.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        label_noise: Option<f64>,
        /// anywhere, trailing or interior.
        #[arg(long)]
        placement: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one head and write its best checkpoint and per-epoch stats.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for the checkpoint, vocabulary and stats.
        #[arg(long)]
        out: Option<PathBuf>,
        /// core or sub.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        denoise: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a reducer on the test split and print a JSON report.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory holding core.ckpt, sub.ckpt and vocab.txt.
        #[arg(long)]
        models: Option<PathBuf>,
        /// leftmost, rightmost, df-rm, cdf-rm, core, sub or agg.
        #[arg(long)]
        reducer: String,
        #[arg(long)]
        nq: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Evaluate on `valid` instead of `test`.
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Reduce one query and print the kept terms.
    Reduce {
        #[arg(long)]
        models: Option<PathBuf>,
        /// core, sub or agg.
        #[arg(long, default_value = "agg")]
        reducer: String,
        #[arg(long)]
        alpha: Option<f64>,
        /// Also print per-term probabilities and the greedy trace.
        #[arg(long, short)]
        verbose: bool,
        query: String,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the aggregated reducer over a grid of weights (TSV).
    SweepAlpha {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Comma-separated weights.
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn push<T: ToString>(flags: &mut Vec<(String, String)>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        flags.push((key.to_string(), v.to_string()));
    }
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn resolve(common: &Common, mut specific: Vec<(String, String)>) -> anyhow::Result<RunConfig> {
    let mut flags = Vec::new();
    push(&mut flags, "preset", &common.preset);
    push(&mut flags, "seed", &common.seed);
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {s:?}"))?;
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    // Dedicated flags override generic --set entries.
    flags.append(&mut specific);
    RunConfig::resolve(common.config.as_deref(), &flags)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut f = Vec::new();
    match cli.command {
        Command::GenData {
            out,
            sessions,
            label_noise,
            placement,
            common,
        } => {
            push(&mut f, "out", &path(&out));
            push(&mut f, "sessions", &sessions);
            push(&mut f, "label_noise", &label_noise);
            push(&mut f, "placement", &placement);
            commands::gen_data(&resolve(&common, f)?)
        }
        Command::Train {
            data,
            out,
            objective,
            denoise,
            epochs,
            batch_size,
            learning_rate,
            common,
        } => {
            push(&mut f, "data", &path(&data));
            push(&mut f, "out", &path(&out));
            push(&mut f, "objective", &objective);
            push(&mut f, "denoise", &denoise.then_some(true));
            push(&mut f, "epochs", &epochs);
            push(&mut f, "batch_size", &batch_size);
            push(&mut f, "learning_rate", &learning_rate);
            commands::train(&resolve(&common, f)?)
        }
        Command::Eval {
            data,
            models,
            reducer,
            nq,
            alpha,
            split,
            common,
        } => {
            push(&mut f, "data", &path(&data));
            push(&mut f, "models", &path(&models));
            push(&mut f, "nq", &nq);
            push(&mut f, "alpha", &alpha);
            commands::eval(&resolve(&common, f)?, &reducer, &split)
        }
        Command::Reduce {
            models,
            reducer,
            alpha,
            verbose,
            query,
            common,
        } => {
            push(&mut f, "models", &path(&models));
            push(&mut f, "alpha", &alpha);
            commands::reduce(&resolve(&common, f)?, &reducer, &query, verbose)
        }
        Command::SweepAlpha {
            data,
            models,
            grid,
            common,
        } => {
            push(&mut f, "data", &path(&data));
            push(&mut f, "models", &path(&models));
            push(&mut f, "alpha_grid", &grid);
            commands::sweep_alpha(&resolve(&common, f)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Reduce { query, .. } = &cli.command {
        if query.trim().is_empty() {
            Cli::command()
                .error(ErrorKind::InvalidValue, "the query must contain at least one term")
                .exit();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
