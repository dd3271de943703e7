//! Command-line front end. Results go to files or standard output, logs to
//! standard error.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 internal error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ConfigError, LoadedConfig, RunConfig, OUTPUT_DIR_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 2,
    Data = 3,
    Internal = 4,
}

/// Failure of a subcommand, tagged with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl ToString) -> Self {
        CliError {
            code: ExitCode::Usage,
            message: message.to_string(),
        }
    }

    pub fn data(message: impl ToString) -> Self {
        CliError {
            code: ExitCode::Data,
            message: message.to_string(),
        }
    }

    pub fn internal(message: impl ToString) -> Self {
        CliError {
            code: ExitCode::Internal,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::usage(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "outlier-audit",
    version,
    about = "Outlier re-identification and utility audits for synthetic tabular data"
)]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,

    /// Original dataset; overrides `paths.original`.
    #[arg(long)]
    pub original: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select z-score outliers in the original dataset.
    Outliers {
        #[command(flatten)]
        common: Common,
        /// Write the outlier listing (CSV) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Link the original outliers against one variant.
    Link {
        #[command(flatten)]
        common: Common,
        /// Variant dataset to attack.
        #[arg(long)]
        variant: PathBuf,
        /// Comma-separated QI subset; defaults to every configured QI.
        #[arg(long, value_delimiter = ',')]
        qis: Option<Vec<String>>,
        /// Directory for `matches.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a variant's utility against the original.
    Utility {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: PathBuf,
        /// Also write the JSON block here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a DP synthetic dataset from the original.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Rows to generate; defaults to `synth.n`, then the original size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        num_bins: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit every `[[variant]]` in the config.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Report directory; overrides the environment and `paths.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep epsilon over the `[sweep]` grid with the built-in generator.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs the CLI with explicit arguments and output stream; returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                ExitCode::Usage
            } else {
                ExitCode::Success
            };
            let _ = e.print();
            return code as i32;
        }
    };
    init_logging(cli.verbose);

    let mut buffer = Vec::new();
    let outcome = match cli.threads {
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, &mut buffer)),
            Err(e) => Err(CliError::internal(e)),
        },
        None => dispatch(&cli.command, &mut buffer),
    };
    let outcome = outcome.and_then(|()| {
        stdout
            .write_all(&buffer)
            .and_then(|()| stdout.flush())
            .map_err(CliError::internal)
    });
    match outcome {
        Ok(()) => ExitCode::Success as i32,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code as i32
        }
    }
}

fn dispatch(command: &Command, stdout: &mut Vec<u8>) -> Result<(), CliError> {
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        commands::execute(command, stdout)
    }));
    result.unwrap_or_else(|_| Err(CliError::internal("unexpected internal failure")))
}
