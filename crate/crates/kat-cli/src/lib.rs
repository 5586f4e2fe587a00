//! The `kat` pipeline: each subcommand reads declared inputs from a shared
//! TOML config and writes declared outputs, stamped with the config
//! fingerprint so unchanged reruns are skipped.

pub mod config;
pub mod live;
mod stages;
mod stamp;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;
use thiserror::Error;

pub use config::RunConfig;
pub use stages::{elicit_records, Stage};

/// Environment variable holding the key for live language-model calls.
pub const API_KEY_VAR: &str = "KAT_LM_API_KEY";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("missing input {}: {}", .path.display(), producer_hint(.producer, .field))]
    MissingInput { path: PathBuf, field: &'static str, producer: Option<&'static str> },
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

fn producer_hint(producer: &Option<&'static str>, field: &str) -> String {
    match producer {
        Some(p) => format!("produced by `kat {p}`, run it first"),
        None => format!("supplied by the user, check paths.{field}"),
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) | CliError::MissingInput { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kat", version, about = "Knowledge-augmented answer generation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Stage,
    /// Run configuration file.
    #[arg(long, short, global = true, default_value = "kat.toml")]
    pub config: PathBuf,
    /// Dotted override such as `retrieval.m=10`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Rerun even when the outputs are up to date.
    #[arg(long, global = true)]
    pub force: bool,
    /// Allow network calls when `implicit.lm_mode = "live"`.
    #[arg(long, global = true)]
    pub live: bool,
}

/// What a successful subcommand did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = RunConfig::load(&cli.config, &cli.overrides)?;
    let ctx = stages::Context { fingerprint: cfg.fingerprint(), cfg, force: cli.force, live: cli.live };
    ctx.run(cli.command)
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(Outcome::Ran) => 0,
        Ok(Outcome::UpToDate) => {
            eprintln!("kat {}: outputs up to date (use --force to rerun)", cli.command.name());
            0
        }
        Err(e) => {
            eprintln!("kat {}: error: {e:#}", cli.command.name());
            e.exit_code()
        }
    }
}
