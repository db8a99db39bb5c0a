//! `iqpbm`: reproducible experiments on IQP-circuit Born machines.
//!
//! Every command writes its CSV/JSON outputs plus a `manifest.json` into
//! `--out`. Exit codes: 0 pass, 1 check failure, 2 configuration error,
//! 3 capacity error.

mod commands;
mod opts;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Parser, Debug)]
#[command(name = "iqpbm", version, about, args_override_self = true)]
pub struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Self-checks: oracle equivalence, loss forms, derivatives, bounds.
    Verify(verify::VerifyArgs),
    /// Loss variance against initialization scale.
    VarScan(commands::VarScanArgs),
    /// Curvature decomposition at an initialization center.
    Curvature(commands::CurvatureArgs),
    /// Gradient-descent training from a patch draw.
    Train(commands::TrainArgs),
    /// Assumption checks and covariances of a target.
    CheckTarget(commands::CheckTargetArgs),
    /// Bit strings sampled from the model distribution.
    Sample(commands::SampleArgs),
    /// Graph summary and light cones.
    GraphInfo(commands::GraphInfoArgs),
    /// Re-runs the command recorded in a manifest.
    Replay(commands::ReplayArgs),
}

#[derive(Debug)]
pub enum CliError {
    Check(String),
    Config(String),
    Capacity(String),
}

impl CliError {
    pub fn config(field: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Config(format!("--{field}: {msg}"))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Capacity(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Capacity(m) => write!(f, "capacity error: {m}"),
        }
    }
}

impl From<iqpbm::Error> for CliError {
    fn from(e: iqpbm::Error) -> Self {
        match e {
            iqpbm::Error::Capacity { .. } => CliError::Capacity(e.to_string()),
            iqpbm::Error::Diverged(_) => CliError::Check(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("json: {e}"))
    }
}

/// What a command hands back for the manifest.
pub struct Outcome {
    pub pass: bool,
    pub config: Value,
    pub seeds: Value,
    pub summary: Value,
    pub outputs: Vec<PathBuf>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: Value,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
    pub status: String,
    pub exit_code: u8,
    pub summary: Value,
}

pub fn write_output(
    dir: &Path,
    name: &str,
    body: &str,
    outputs: &mut Vec<PathBuf>,
) -> Result<(), CliError> {
    let p = dir.join(name);
    std::fs::write(&p, body)?;
    outputs.push(p);
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Verify(_) => "verify",
        Command::VarScan(_) => "var-scan",
        Command::Curvature(_) => "curvature",
        Command::Train(_) => "train",
        Command::CheckTarget(_) => "check-target",
        Command::Sample(_) => "sample",
        Command::GraphInfo(_) => "graph-info",
        Command::Replay(_) => "replay",
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<u8, CliError> {
    if let Command::Replay(r) = &cli.command {
        return commands::replay(r, &cli.out, cli.workers);
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::config("workers", "must be at least 1"));
        }
        // Ignored if a pool already exists (replay inside one process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global();
    }
    std::fs::create_dir_all(&cli.out)?;
    let started = chrono::Utc::now().to_rfc3339();
    let name = command_name(&cli.command);
    let result = match &cli.command {
        Command::Verify(a) => verify::run(a, &cli.out),
        Command::VarScan(a) => commands::var_scan(a, &cli.out),
        Command::Curvature(a) => commands::curvature(a, &cli.out),
        Command::Train(a) => commands::train(a, &cli.out),
        Command::CheckTarget(a) => commands::check_target(a, &cli.out),
        Command::Sample(a) => commands::sample(a, &cli.out),
        Command::GraphInfo(a) => commands::graph_info(a, &cli.out),
        Command::Replay(_) => unreachable!(),
    };
    let (outcome, code, status) = match result {
        Ok(o) => {
            let code = if o.pass { 0 } else { 1 };
            let status = if o.pass { "pass" } else { "check failure" }.to_string();
            (Some(o), code, status)
        }
        Err(e) => (None, e.exit_code(), e.to_string()),
    };
    let o = outcome.unwrap_or(Outcome {
        pass: false,
        config: Value::Null,
        seeds: Value::Null,
        summary: Value::Null,
        outputs: vec![],
    });
    let manifest = RunManifest {
        command: name.into(),
        argv,
        config: o.config,
        seeds: o.seeds,
        version: env!("CARGO_PKG_VERSION").into(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        outputs: o.outputs,
        status: status.clone(),
        exit_code: code,
        summary: o.summary,
    };
    std::fs::write(
        cli.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    if code != 0 {
        eprintln!("{status}");
    }
    Ok(code)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
