//! `ridsim`: experiment runner for the Remote ID delay model and the
//! multi-agent protocol-switching policy.
//!
//! Every subcommand reads one TOML config, writes CSV files plus a
//! `manifest.toml` into the output directory, and maps failures onto fixed
//! exit codes (see [`CliError::exit_code`]).

pub mod config;
pub mod output;
pub mod policy;
pub mod sweep;
pub mod verify;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rid_core::airspace::EnvError;
use rid_core::madqn::MadqnError;
use rid_core::protocol::ProtocolError;
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Invalid(_) | EnvError::Constraint(_) | EnvError::Protocol(_) => CliError::Config(e.to_string()),
            EnvError::Radio(_) | EnvError::Delay(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MadqnError> for CliError {
    fn from(e: MadqnError) -> Self {
        match e {
            MadqnError::Env(env) => env.into(),
            MadqnError::NonFiniteLoss { .. } | MadqnError::NonFiniteReward(_) => CliError::Numerical(e.to_string()),
            MadqnError::ShapeMismatch { .. } | MadqnError::Config(_) => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ridsim", version, about = "Remote ID broadcast delay experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `experiment.replicates`.
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Mean delay of fixed assignments for every protocol and rate.
    RateSweep,
    /// Fixed BLE against fixed Wi-Fi across airspace sizes.
    DensityCompare,
    /// Train the switching policy and save a checkpoint.
    Train,
    /// Evaluate a checkpoint against the fixed baselines.
    Eval {
        /// Checkpoint to load; defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check the analytical reception model against the slot walkers.
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RateSweep => "rate-sweep",
            Command::DensityCompare => "density-compare",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Verify => "verify",
        }
    }
}

/// Loads the config and applies command-line overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.experiment.seed = s;
    }
    if let Some(r) = args.replicates {
        cfg.experiment.replicates = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: &Command, cfg: &RunConfig, out: &Path) -> Result<(Vec<PathBuf>, Option<String>), CliError> {
    let env = || cfg.environment();
    match command {
        Command::RateSweep => {
            let s = sweep::rate_sweep(cfg, &env()?)?;
            for p in s.pooled.iter().filter(|p| p.argmin) {
                log::info!("{:?}: lowest pooled delay at rate {} ({:.1} ms)", p.protocol, p.psi, p.mean_ms);
            }
            Ok((sweep::write_rate_sweep(out, &s)?, None))
        }
        Command::DensityCompare => {
            let d = sweep::density_compare(cfg, &env()?)?;
            Ok((sweep::write_density(out, &d)?, None))
        }
        Command::Train => {
            let t = policy::run_training(cfg, &env()?)?;
            Ok((policy::write_training(out, cfg, &t)?, None))
        }
        Command::Eval { checkpoint } => {
            let path = checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.json"));
            let pol = policy::Checkpoint::load(&path)?.into_policy(cfg)?;
            let e = policy::evaluate(cfg, &env()?, &pol)?;
            for s in &e.summary {
                log::info!(
                    "{:?}: policy {:.1} ms, BLE {:.1} ms, Wi-Fi {:.1} ms",
                    s.regime,
                    s.policy_ms,
                    s.fixed_ble_ms,
                    s.fixed_wifi_ms
                );
            }
            Ok((policy::write_evaluation(out, &e)?, None))
        }
        Command::Verify => {
            let r = verify::verify(cfg)?;
            for c in &r.checks {
                log::info!("{}: {:?} ({} cases, {} mismatches)", c.check, c.status, c.cases, c.mismatches);
            }
            Ok((verify::write_verify(out, &r)?, r.failure()))
        }
    }
}

/// Runs one subcommand end to end, writing outputs and the manifest.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.common)?;
    let out = &cli.common.out;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (files, failure) = pool.install(|| execute(&cli.command, &cfg, out))?;
    output::write_manifest(out, cli.command.name(), &cfg, pool.current_num_threads(), &files)?;
    match failure {
        Some(msg) => Err(CliError::Verification(msg)),
        None => Ok(()),
    }
}
