//! Subcommand implementations.

use serde::Serialize;

use hetsgd_core::analysis::power_of_two_batches;
use hetsgd_core::engine::{
    default_gamma_grid, tune_gamma, tune_rennala, BuiltMethod, EngineError, Method, MethodContext,
    MethodRegistry, Rennala, Scenario, TuneResult,
};

use crate::config::{ExperimentConfig, MethodEntry, Setup};

mod histogram;
mod plan;
mod simulate;
mod sweep;
mod tune;

pub use histogram::histogram;
pub use plan::plan;
pub use simulate::{simulate, MethodSummary, Stats, Summary};
pub use sweep::sweep;
pub use tune::tune;

/// Outcome of a command. The process exits nonzero when `errors > 0`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub errors: usize,
}

/// Structured error attached to a method or run.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

impl From<&EngineError> for ErrorInfo {
    fn from(e: &EngineError) -> Self {
        ErrorInfo {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

pub(crate) fn context<'a>(setup: &'a Setup) -> MethodContext<'a> {
    MethodContext {
        cluster: &setup.cluster,
        constants: setup.constants,
    }
}

pub(crate) fn build(entry: &MethodEntry, setup: &Setup) -> Result<BuiltMethod, EngineError> {
    MethodRegistry::new().build(&entry.name, &entry.params_value(), &context(setup))
}

pub(crate) fn gamma_grid(cfg: &ExperimentConfig, setup: &Setup) -> Vec<f64> {
    cfg.tuning
        .gamma_grid
        .clone()
        .unwrap_or_else(|| default_gamma_grid(setup.constants.smoothness))
}

pub(crate) fn batch_grid(cfg: &ExperimentConfig, setup: &Setup) -> Vec<u64> {
    cfg.tuning.batch_grid.clone().unwrap_or_else(|| {
        let target = setup
            .constants
            .batch_target()
            .max(setup.cluster.len() as f64);
        power_of_two_batches(target)
    })
}

/// Search over the stepsize, and for Rennala also over `S` when
/// `tune_batch` is set.
pub(crate) fn run_tuning(
    method: &dyn Method,
    tune_gamma_too: bool,
    tune_batch: bool,
    cfg: &ExperimentConfig,
    setup: &Setup,
) -> Result<TuneResult, EngineError> {
    let scenario = Scenario::new(&setup.problem, &setup.cluster);
    let run_cfg = cfg.run_config();
    let seeds = cfg.tuning_seeds();
    let gammas = if tune_gamma_too {
        gamma_grid(cfg, setup)
    } else {
        vec![method.gamma()]
    };
    if tune_batch {
        tune_rennala(
            &scenario,
            &run_cfg,
            &batch_grid(cfg, setup),
            &gammas,
            &seeds,
        )
    } else {
        tune_gamma(method, &scenario, &run_cfg, &gammas, &seeds)
    }
}

/// A method ready to run, with the tuning that produced it.
pub struct ResolvedMethod {
    pub label: String,
    pub method: Box<dyn Method>,
    pub tuning: Option<TuneResult>,
}

/// Build one entry and resolve any `"tune"` parameters. When tuning finds no
/// setting that reaches `eps`, the untuned method is kept.
pub(crate) fn resolve(
    entry: &MethodEntry,
    cfg: &ExperimentConfig,
    setup: &Setup,
) -> Result<ResolvedMethod, EngineError> {
    let built = build(entry, setup)?;
    let label = entry.label().to_string();
    if !built.tuning.gamma && !built.tuning.batch {
        return Ok(ResolvedMethod {
            label,
            method: built.method,
            tuning: None,
        });
    }
    let result = run_tuning(
        built.method.as_ref(),
        built.tuning.gamma,
        built.tuning.batch,
        cfg,
        setup,
    )?;
    let method = match (&result.best, result.best.as_ref().and_then(|b| b.batch)) {
        (Some(best), Some(batch)) => Box::new(Rennala::new(batch, best.gamma)?) as Box<dyn Method>,
        (Some(best), None) => built.method.with_gamma(best.gamma),
        (None, _) => built.method,
    };
    Ok(ResolvedMethod {
        label,
        method,
        tuning: Some(result),
    })
}
