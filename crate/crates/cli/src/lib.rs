//! Command-line front end and local HTTP service for the `ovseg-core`
//! segmentation engine.
//!
//! Subcommands:
//!
//! - `segment`: label images against a free-form vocabulary
//! - `eval`: score a labelled dataset and write mIoU reports
//! - `serve`: stateless JSON API for interactive use
//! - `aggregate-masks`: merge scored instance masks into objectness maps
//!
//! Exit codes are 0 on success, 1 for per-file or data errors, 2 for usage
//! errors, 3 when the metric is undefined and 4 when the port is taken.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod aggregate;
pub mod config;
pub mod engine;
pub mod eval;
pub mod providers;
pub mod segment;
pub mod serve;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_UNDEFINED: u8 = 3;
pub const EXIT_PORT_IN_USE: u8 = 4;

/// A command that did not complete, with its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
    Undefined(String),
    PortInUse(String),
}

impl Failure {
    pub fn usage(e: impl fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => EXIT_FAILURE,
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Undefined(_) => EXIT_UNDEFINED,
            Failure::PortInUse(_) => EXIT_PORT_IN_USE,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) | Failure::Undefined(m) | Failure::PortInUse(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ovseg", version, about = "Open-vocabulary semantic segmentation")]
pub struct Cli {
    /// TOML file with defaults for any flag
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment images and write labels, probabilities and overlays
    Segment(segment::SegmentArgs),
    /// Evaluate on a labelled dataset
    Eval(eval::EvalArgs),
    /// Run the HTTP service
    Serve(serve::ServeArgs),
    /// Merge scored instance masks into objectness maps
    AggregateMasks(aggregate::AggregateArgs),
}

impl Cli {
    pub fn execute(self) -> Result<(), Failure> {
        let file = match &self.config {
            Some(p) => config::FileConfig::load(p)?,
            None => config::FileConfig::default(),
        };
        match self.command {
            Command::Segment(args) => segment::run(args, &file),
            Command::Eval(args) => eval::run(args, &file),
            Command::Serve(args) => serve::run(args, &file),
            Command::AggregateMasks(args) => aggregate::run(args, &file),
        }
    }
}

/// Parses arguments, runs the command and reports errors on stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return u8::try_from(e.exit_code()).unwrap_or(EXIT_USAGE);
        }
    };
    match cli.execute() {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

/// Runs `f` on a pool of at most `jobs` threads.
pub(crate) fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(Failure::runtime)?;
    Ok(pool.install(f))
}
