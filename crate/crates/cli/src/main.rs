//! `fvhand`: command-line entry point of the hand twin.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.

mod commands;
mod config;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "fvhand", version, about = "Software twin of a five-finger soft hand with fingertip cameras")]
struct Cli {
    /// Plain `key=value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Random seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the 1 kHz hand simulation and write a per-tick CSV trace.
    Simulate(commands::SimulateArgs),
    /// Tune the controller speed clamps to the measured closing times.
    Calibrate(commands::CalibrateArgs),
    /// Render the synthetic grasp dataset to a directory.
    DatasetGen(commands::DatasetGenArgs),
    /// Train a segmentation network and write int8 weights.
    Train(commands::TrainArgs),
    /// Segment one image and print the mask.
    Infer(commands::InferArgs),
    /// Run-wise cross-validation over a dataset directory.
    Eval(commands::EvalArgs),
    /// Encode one frame as a DCMI packet file.
    Encode(commands::EncodeArgs),
    /// Multiplex rendered camera streams onto one link, optionally faulty.
    Mux(commands::MuxArgs),
    /// Decode a DCMI byte stream and report frames and sync losses.
    Replay(commands::ReplayArgs),
    /// Live session for the teleoperation panel over TCP or WebSocket.
    Serve(serve::ServeArgs),
}

/// Failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "data error: {e:#}"),
            CliError::Runtime(e) => write!(f, "runtime failure: {e:#}"),
        }
    }
}

/// Attach an exit-code class and context to a fallible call.
pub trait Classify<T> {
    fn data(self, context: impl std::fmt::Display) -> Result<T, CliError>;
    fn runtime(self, context: impl std::fmt::Display) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn data(self, context: impl std::fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Data(e.into().context(context.to_string())))
    }

    fn runtime(self, context: impl std::fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into().context(context.to_string())))
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path).map_err(CliError::Usage)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v).map_err(CliError::Usage)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    log::info!("resolved configuration:\n{}", cfg.render().trim_end());
    match cli.command {
        Command::Simulate(a) => commands::simulate(&cfg, a),
        Command::Calibrate(a) => commands::calibrate(&cfg, a),
        Command::DatasetGen(a) => commands::dataset_gen(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Infer(a) => commands::infer(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Encode(a) => commands::encode(&cfg, a),
        Command::Mux(a) => commands::mux(&cfg, a),
        Command::Replay(a) => commands::replay(&cfg, a),
        Command::Serve(a) => serve::serve(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fvhand: {e}");
            ExitCode::from(e.code())
        }
    }
}

