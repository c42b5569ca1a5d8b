//! `popcluster` command-line pipeline.
//!
//! ```text
//! popcluster <subcommand> --config <path> [--output-dir <path>] [--seed <u64>]
//! ```
//!
//! `pipeline` runs every stage; `sweep`, `fit`, `stability`, `interpret` and
//! `diagnose` run one stage each and read earlier stages' outputs from the
//! output directory; `synth` writes planted-cluster test data together with
//! a config for `pipeline`.
//!
//! Exit codes: 0 success, 2 invalid configuration or input, 3 failure while
//! computing or writing outputs.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod inputs;
pub mod output;
pub mod report;
pub mod stages;
mod synth_cmd;

pub use commands::{cmd_diagnose, cmd_fit, cmd_interpret, cmd_pipeline, cmd_stability, cmd_sweep, cmd_synth};
pub use config::Overrides;
pub use error::{CliError, EXIT_COMPUTE, EXIT_OK, EXIT_VALIDATION};
pub use report::RunReport;

#[derive(Debug, Parser)]
#[command(name = "popcluster", version, about = "PCA + Gaussian mixture clustering of trial × feature matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// All stages, cross-subject interpretation and report.json.
    Pipeline(CommonArgs),
    /// PCA and the BIC sweep over K.
    Sweep(CommonArgs),
    /// Final fit at the chosen K (needs `sweep`).
    Fit(CommonArgs),
    /// Refit stability at the fitted K (needs `fit`).
    Stability(CommonArgs),
    /// Overlap, NMI and cosine comparisons (needs `fit`).
    Interpret(CommonArgs),
    /// PCA diagnostics on the raw matrices.
    Diagnose(CommonArgs),
    /// Generate planted-cluster data and a pipeline config.
    Synth(CommonArgs),
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let (run, args): (fn(&std::path::Path, &Overrides) -> Result<(), CliError>, CommonArgs) = match cmd {
        Command::Pipeline(a) => (|c, o| cmd_pipeline(c, o).map(|_| ()), a),
        Command::Sweep(a) => (cmd_sweep, a),
        Command::Fit(a) => (cmd_fit, a),
        Command::Stability(a) => (cmd_stability, a),
        Command::Interpret(a) => (cmd_interpret, a),
        Command::Diagnose(a) => (cmd_diagnose, a),
        Command::Synth(a) => (|c, o| cmd_synth(c, o).map(|_| ()), a),
    };
    let ov = Overrides {
        output_dir: args.output_dir,
        seed: args.seed,
    };
    run(&args.config, &ov)
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
