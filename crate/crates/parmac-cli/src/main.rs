//! `parmac`: binary autoencoders trained with distributed MAC.
//!
//! Subcommands cover the full experiment loop: synthetic data generation,
//! serial and ring-distributed training, scripted fault scenarios on the
//! lockstep simulator, the closed-form speedup model, retrieval metrics, and
//! fitting the model's time constants to measurements.
//!
//! Exit codes: 0 on success, 1 on a usage error (a synopsis is printed), 2
//! on a runtime error.

mod config;
mod jobs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "parmac",
    version,
    about = "Binary autoencoder training with MAC, its ring-distributed runtime, and the speedup model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic Gaussian-mixture dataset and write it as fvecs.
    Gen {
        /// Output file.
        #[arg(long)]
        out: PathBuf,
        /// Number of points.
        #[arg(long)]
        n: usize,
        /// Point dimension.
        #[arg(long)]
        dim: usize,
        /// Mixture components.
        #[arg(long, default_value_t = 8)]
        clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serial MAC training; writes learning_curve.csv and model.ckpt.
    Train {
        /// Job config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Distributed ParMAC training; adds comm_log.json to the train outputs.
    Run {
        /// Job config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out_dir: PathBuf,
        /// Machine count, overriding the config.
        #[arg(long = "P", value_name = "P")]
        p: Option<usize>,
    },
    /// Replay a scripted scenario (faults, membership changes) on the
    /// lockstep simulator; adds trace.json to the run outputs.
    Simulate {
        /// Job config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Scenario JSON: machine count, routing flags, scripted events.
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Emit a speedup curve CSV or a theorem-verifier report JSON.
    Speedup {
        /// Speedup config JSON with a `curve` or `verify` section.
        #[arg(long)]
        config: PathBuf,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieval metrics for a checkpoint: precision and recall@R.
    Eval {
        /// Eval config JSON (checkpoint, base, optional queries, cutoffs).
        #[arg(long)]
        config: PathBuf,
        /// Metrics JSON output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the speedup model's time constants to measured (P, speedup)
    /// pairs.
    FitTimes {
        /// Fit config JSON (measured pairs plus fixed N, M, e).
        #[arg(long)]
        config: PathBuf,
        /// Fitted-constants JSON output file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Gen {
            out,
            n,
            dim,
            clusters,
            seed,
        } => jobs::gen(&out, n, dim, clusters, seed),
        Command::Train { config, out_dir } => jobs::train(&config, &out_dir),
        Command::Run { config, out_dir, p } => jobs::run(&config, &out_dir, p),
        Command::Simulate {
            config,
            scenario,
            out_dir,
        } => jobs::simulate(&config, &scenario, &out_dir),
        Command::Speedup { config, out } => jobs::speedup(&config, &out),
        Command::Eval { config, out } => jobs::eval(&config, &out),
        Command::FitTimes { config, out } => jobs::fit_times(&config, &out),
    }
}
