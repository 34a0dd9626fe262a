//! Command-line surface: dataset generation, training, sweeps, filter
//! inspection, and evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Errors print a
//! single machine-parsable `error: ...` line on stderr.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "wavedec",
    about = "Wavelet-feature vs. end-to-end learned filterbank decoding",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset container.
    GenData {
        /// TOML run configuration (defaults used when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory (or $WAVEDEC_OUT_ROOT/dataset).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override [data].seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override [data].n_sessions.
        #[arg(long)]
        sessions: Option<usize>,
        /// Override [data].session_duration_s.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train one model and write its checkpoint, curve, and run manifest.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Decoder family: mlp | cnn-lstm-mt.
        #[arg(long)]
        model: String,
        /// Frontend: hand-crafted | e2e-free | e2e-cfo | e2e-random.
        #[arg(long)]
        frontend: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// CFO squeeze reparameterization (10–150 Hz mapped to 0–1).
        #[arg(long)]
        squeeze: bool,
        /// Train only on the first N sessions (default: all).
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Run a dataset-size or label-noise sweep over model/frontend cells.
    Sweep {
        /// Protocol: size | noise.
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        dataset: PathBuf,
        /// TOML spec ([experiment] section selects families/modes/seeds).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Upper bound on parallel cell workers (cells currently execute
        /// sequentially; any schedule yields identical results).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare filters of two checkpoints (before/after training).
    InspectFilters {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset partition.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Evaluate only windows of sessions with index >= this.
        #[arg(long)]
        sessions_from: Option<usize>,
        /// Metrics JSON path (or $WAVEDEC_OUT_ROOT/eval.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("error: {}", first_line(&e.to_string()));
            std::process::exit(1);
        }
    };
    let result = match cli.command {
        Command::GenData {
            config,
            out,
            seed,
            sessions,
            duration,
        } => commands::gen_data(config, out, seed, sessions, duration),
        Command::Train {
            dataset,
            model,
            frontend,
            config,
            out,
            squeeze,
            sessions,
            seed,
            max_epochs,
            batch_size,
            learning_rate,
            patience,
        } => commands::train_cmd(commands::TrainArgs {
            dataset,
            model,
            frontend,
            config,
            out,
            squeeze,
            sessions,
            seed,
            max_epochs,
            batch_size,
            learning_rate,
            patience,
        }),
        Command::Sweep {
            protocol,
            dataset,
            config,
            out,
            jobs,
        } => commands::sweep(protocol, dataset, config, out, jobs),
        Command::InspectFilters { before, after, out } => {
            commands::inspect_filters(before, after, out)
        }
        Command::Eval {
            checkpoint,
            dataset,
            sessions_from,
            out,
        } => commands::eval(checkpoint, dataset, sessions_from, out),
    };
    match result {
        Ok(()) => {}
        Err(commands::CmdError::Usage(msg)) => {
            eprintln!("error: {}", first_line(&msg));
            std::process::exit(1);
        }
        Err(commands::CmdError::Runtime(msg)) => {
            eprintln!("error: {}", first_line(&msg));
            std::process::exit(2);
        }
    }
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("unknown error").to_string()
}
