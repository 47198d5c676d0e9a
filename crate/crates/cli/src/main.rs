//! `ifsr`: batch front end for stationary measures of random affine maps.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid input,
//! 3 regime or feasibility failure, 4 a pass/fail gate failed.

mod commands;
mod config;
mod emit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};
use thiserror::Error;

use commands::Output;
use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("regime: {0}")]
    Regime(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Regime(_) => 3,
            CliError::Io(_) | CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ifsr", version, about = "Stationary laws, linear response and its failure for random affine maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print JSON on stdout instead of CSV.
    #[arg(long, global = true)]
    json: bool,
    /// Directory receiving `<table>.csv` and `<command>.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Lyapunov exponent, dimension, tail exponent and regime.
    Analyze,
    /// Exact moments, optionally checked by Monte Carlo.
    Moments,
    /// Response formula against finite differences.
    Response,
    /// Empirical tail probabilities.
    Tail,
    /// Witness families and the divergence report.
    Nondiff,
    /// Raw truncated samples.
    Sample,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Moments => "moments",
            Command::Response => "response",
            Command::Tail => "tail",
            Command::Nondiff => "nondiff",
            Command::Sample => "sample",
        }
    }
}

fn document(command: &str, cfg: &RunConfig, output: &Output) -> Value {
    let mut tables = Map::new();
    for t in &output.tables {
        tables.insert(t.name.clone(), t.to_json());
    }
    let mut doc = json!({
        "command": command,
        "seed": cfg.seed,
        "replicas": cfg.replicas,
        "truncation": cfg.truncation,
        "tables": tables,
        "notes": output.notes,
        "gate_failure": output.gate_failure,
    });
    for (name, value) in &output.documents {
        doc[name] = value.clone();
    }
    doc
}

fn pretty(value: &Value) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn run(cli: &Cli) -> Result<Output, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let output = match cli.command {
        Command::Analyze => commands::analyze(&cfg, cli.threads),
        Command::Moments => commands::moments(&cfg, cli.threads),
        Command::Response => commands::response(&cfg, cli.threads),
        Command::Tail => commands::tail(&cfg, cli.threads),
        Command::Nondiff => commands::nondiff(&cfg, cli.threads),
        Command::Sample => commands::sample(&cfg, cli.threads),
    }?;
    let name = cli.command.name();
    let doc = document(name, &cfg, &output);
    if let Some(dir) = &cli.out {
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        for t in &output.tables {
            std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv()).map_err(io)?;
        }
        std::fs::write(dir.join(format!("{name}.json")), pretty(&doc)?).map_err(io)?;
    }
    if cli.json {
        print!("{}", pretty(&doc)?);
    } else {
        for (i, t) in output.tables.iter().enumerate() {
            if i > 0 {
                println!();
            }
            print!("{}", t.to_csv());
        }
    }
    for note in &output.notes {
        eprintln!("{note}");
    }
    Ok(output)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(output) => match output.gate_failure {
            Some(msg) => {
                eprintln!("gate failed: {msg}");
                ExitCode::from(4)
            }
            None => ExitCode::SUCCESS,
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
