use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tgcn_cli::commands;
use tgcn_cli::config::RunConfig;
use tgcn_core::Split;

/// Knowledge-graph embedding: relational graph convolution with
/// tensor-factored message transforms.
#[derive(Parser)]
#[command(name = "tgcn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file; writes checkpoints, a progress
    /// log and a metrics file into the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a split under the filtered random protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print free-parameter counts for a configured model (no training).
    Audit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train and validate once per value of a hyperparameter, printing a
    /// plot-ready table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Hyperparameter to sweep: n_b or g_s.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        /// Run the sweep points concurrently (independent runs).
        #[arg(long, default_value_t = false)]
        parallel: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run() -> tgcn_core::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out.display().to_string();
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let outcome = commands::cmd_train(&cfg, false)?;
            println!(
                "done: {} iterations, best val MRR {:.4} at iteration {} (checkpoints in {})",
                outcome.iterations_run,
                outcome.best_val_mrr,
                outcome.best_iteration,
                outcome.out_dir.display()
            );
        }
        Command::Eval {
            checkpoint,
            split,
            seed,
            out,
        } => {
            let split: Split = split.parse()?;
            let (_, text) = commands::cmd_eval(&checkpoint, split, seed, out.as_deref())?;
            print!("{text}");
        }
        Command::Audit { config } => {
            let cfg = RunConfig::load(&config)?;
            let counts = commands::audit_counts(&cfg)?;
            print!("{}", commands::format_audit(&counts));
        }
        Command::Sweep {
            config,
            key,
            values,
            parallel,
            out,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out.display().to_string();
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (_, table) = commands::cmd_sweep(&cfg, &key, &values, parallel, false)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
