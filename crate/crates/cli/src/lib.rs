//! Config-driven command line runner for `hetsgd-core`.
//!
//! Every command reads one JSON [`config::ExperimentConfig`], writes its
//! artifacts atomically into an output directory and stamps them with the
//! config hash, seed and crate version.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::{ExperimentConfig, SweepMode, SweepSpec};
use output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "hetsgd",
    version,
    about = "Simulate asynchronous SGD methods on heterogeneous clusters"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config and `HETSGD_OUT`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the theoretical parameters of every method.
    Plan,
    /// Run every method for every seed.
    Simulate,
    /// Repeat an experiment over the values of one config field.
    Sweep {
        /// Dotted config path, e.g. `cluster.delay.s`.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values; each is parsed as JSON, else kept as a string.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        #[arg(long, value_enum)]
        mode: Option<SweepModeArg>,
    },
    /// Round-time histogram and its K-fold convolution.
    Histogram,
    /// Grid-search stepsizes (and Rennala's S).
    Tune,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SweepModeArg {
    Simulate,
    Compare,
    Ratio,
}

impl From<SweepModeArg> for SweepMode {
    fn from(m: SweepModeArg) -> Self {
        match m {
            SweepModeArg::Simulate => SweepMode::Simulate,
            SweepModeArg::Compare => SweepMode::Compare,
            SweepModeArg::Ratio => SweepMode::Ratio,
        }
    }
}

fn parse_value(s: &str) -> Value {
    serde_json::from_str(s.trim()).unwrap_or_else(|_| Value::String(s.trim().to_string()))
}

fn sweep_spec(
    cfg: &ExperimentConfig,
    axis: Option<String>,
    values: Option<Vec<String>>,
    mode: Option<SweepModeArg>,
) -> Result<SweepSpec> {
    let base = cfg.sweep.clone();
    let axis = axis
        .or_else(|| base.as_ref().map(|s| s.axis.clone()))
        .context("sweep needs --axis or a \"sweep\" config section")?;
    let values = match values {
        Some(v) => v.iter().map(|s| parse_value(s)).collect(),
        None => base.as_ref().map(|s| s.values.clone()).unwrap_or_default(),
    };
    if values.is_empty() {
        anyhow::bail!("sweep over {axis} has no values");
    }
    let mode = mode
        .map(SweepMode::from)
        .or_else(|| base.as_ref().map(|s| s.mode))
        .unwrap_or_default();
    Ok(SweepSpec { axis, values, mode })
}

/// Run one invocation. Returns the number of reported errors; the binary
/// exits nonzero when it is positive.
pub fn run(cli: Cli, env_out: Option<PathBuf>) -> Result<usize> {
    let path = cli
        .global
        .config
        .as_deref()
        .context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.global.seed {
        cfg.seeds = vec![seed];
    }
    let format = cli.global.format;
    let dir = cfg.output_dir(cli.global.out.as_deref(), env_out.as_deref());
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = cli.global.jobs {
            b = b.num_threads(j.max(1));
        }
        b.build()?
    };
    pool.install(|| -> Result<usize> {
        let report = match cli.command {
            Command::Plan => {
                let mut buf = Vec::new();
                let r = commands::plan(&cfg, &mut buf)?;
                write_stdout(&buf)?;
                r
            }
            Command::Simulate => {
                std::fs::create_dir_all(&dir)?;
                commands::simulate(&cfg, &dir, format)?.0
            }
            Command::Sweep { axis, values, mode } => {
                let spec = sweep_spec(&cfg, axis, values, mode)?;
                std::fs::create_dir_all(&dir)?;
                commands::sweep(&cfg, &spec, &dir, format)?
            }
            Command::Histogram => {
                std::fs::create_dir_all(&dir)?;
                let (r, h) = commands::histogram(&cfg, &dir, format)?;
                write_stdout(json_line(&h)?.as_bytes())?;
                r
            }
            Command::Tune => {
                std::fs::create_dir_all(&dir)?;
                let (r, entries) = commands::tune(&cfg, &dir, format)?;
                write_stdout(json_line(&entries)?.as_bytes())?;
                r
            }
        };
        Ok(report.errors)
    })
}

fn json_line<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn write_stdout(bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(bytes) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}
