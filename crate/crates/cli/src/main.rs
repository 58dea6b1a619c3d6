use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bootgan_cli::{cmd_eval, cmd_expand, cmd_synthesize, cmd_train, CliError, EvalArgs};
use clap::{Parser, Subcommand};

/// Bootstrapped entity set expansion with adversarially learned boundaries.
#[derive(Parser)]
#[command(name = "bootgan", version)]
struct Cli {
    /// Config file: a synthetic spec for `synthesize`, a run config for `train`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path: dataset file, artifact directory, listing file or report directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config's seed (the base seed for repeated runs).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset from a spec file.
    Synthesize,
    /// Train and evaluate according to a run config.
    Train,
    /// Replay a trained run's expansions without training.
    Expand {
        /// Run directory, or a train output (its first run is used).
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Iterations to replay (K); defaults to all trained iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Entities per category per iteration (N); defaults to the trained N.
        #[arg(long)]
        per_iteration: Option<usize>,
    },
    /// Score a trace or a train output against gold labels.
    Eval {
        #[arg(long, conflicts_with = "artifact", required_unless_present = "artifact")]
        trace: Option<PathBuf>,
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Also score the pattern-overlap baseline.
        #[arg(long)]
        with_baseline: bool,
        /// N for the baseline.
        #[arg(long)]
        per_iteration: Option<usize>,
    },
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::Config(format!("this command needs {flag}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synthesize => {
            let out = require(cli.out, "--out")?;
            cmd_synthesize(&require(cli.config, "--config")?, &out, cli.seed)?;
        }
        Command::Train => {
            let outcome = cmd_train(&require(cli.config, "--config")?, cli.out.as_deref(), cli.seed)?;
            if let Some(report) = outcome.report {
                report.write_table(std::io::stdout().lock())?;
            }
        }
        Command::Expand {
            artifact,
            dataset,
            iterations,
            per_iteration,
        } => {
            let listing = cmd_expand(&artifact, &dataset, iterations, per_iteration)?;
            match cli.out {
                Some(path) => std::fs::write(&path, listing).map_err(|source| CliError::Io { path, source })?,
                None => {
                    let _ = std::io::stdout().lock().write_all(listing.as_bytes());
                }
            }
        }
        Command::Eval {
            trace,
            artifact,
            dataset,
            k,
            with_baseline,
            per_iteration,
        } => {
            let reports = cmd_eval(&EvalArgs {
                trace,
                artifact,
                dataset,
                k,
                with_baseline,
                per_iteration,
                out: cli.out,
            })?;
            let mut stdout = std::io::stdout().lock();
            for r in reports {
                r.write_table(&mut stdout)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
