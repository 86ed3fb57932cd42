//! `wiopen` command-line pipeline: synth → preprocess → train → eval/infer,
//! plus the uncertainty report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! divergence.

pub mod commands;
pub mod config;
pub mod manifest;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use wiopen_core::{par, Error};

use crate::config::RunConfig;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "wiopen",
    version,
    about = "Open-set Wi-Fi gesture recognition pipeline",
    after_help = "Any configuration key can be overridden with --key=value, e.g. --xi=3 --epochs=10.\n\
                  Environment variables WIOPEN_<KEY> apply between the config file and the flags."
)]
pub struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a CSI dataset
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a CSI dataset into network inputs and Doppler targets
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise and domain uncertainty of a CSI dataset
    Uncertainty {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the embedding network and build the decision model
    Train {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Open-set metrics on the held-out split
    Eval {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-record labels and scores
    Infer {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration with key documentation
    Config,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn config(e: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: format!("configuration error: {e}"),
        }
    }

    fn stage(command: &str, e: Error) -> Self {
        let code = if e.is_divergence() {
            EXIT_DIVERGENCE
        } else if e.is_config() {
            EXIT_CONFIG
        } else {
            EXIT_DATA
        };
        CliError {
            code,
            message: format!("{command} failed: {e}"),
        }
    }
}

const CLAP_FLAGS: &[&str] = &["config", "out", "data", "tensors", "model", "help", "version"];

/// Separates `--key=value` configuration overrides from clap's own flags.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        if let Some((k, v)) = a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            if !CLAP_FLAGS.contains(&k) {
                overrides.push((k.to_string(), v.to_string()));
                continue;
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}

/// Runs one invocation; `args` includes the program name.
pub fn run(args: Vec<String>) -> Result<(), CliError> {
    let (rest, overrides) = split_overrides(args);
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::config(e.to_string().trim_end())),
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), std::env::vars(), &overrides).map_err(CliError::config)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.render());
        return Ok(());
    }
    for (k, v) in cfg.entries() {
        eprintln!("config: {k} = {v}");
    }
    let name = command_name(&cli.command);
    par::with_threads(cfg.threads, || dispatch(&cli.command, &cfg)).map_err(|e| CliError::stage(name, e))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth { .. } => "synth",
        Command::Preprocess { .. } => "preprocess",
        Command::Uncertainty { .. } => "uncertainty",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Infer { .. } => "infer",
        Command::Config => "config",
    }
}

fn dispatch(c: &Command, cfg: &RunConfig) -> wiopen_core::Result<()> {
    match c {
        Command::Synth { out } => commands::synth(cfg, out),
        Command::Preprocess { data, out } => commands::preprocess(cfg, data, out),
        Command::Uncertainty { data, out } => commands::uncertainty(cfg, data, out),
        Command::Train { tensors, out } => commands::train_model(cfg, tensors, out),
        Command::Eval { tensors, model, out } => commands::eval(cfg, tensors, model, out),
        Command::Infer { tensors, model, out } => commands::infer(cfg, tensors, model, out),
        Command::Config => Ok(()),
    }
}
