//! Virtual-clock simulation of the five methods.
//!
//! Every method implements [`Method`] and is selected by name through a
//! [`MethodRegistry`]. A run is a pure function of the scenario, the run
//! configuration and the seed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{PlanError, ProblemConstants};
use crate::problems::{Oracle, Workload};
use crate::rng::{purpose, stream, SimRng};
use crate::timemodel::{ClusterModel, ExtendedTime};

mod methods;
mod queue;
mod registry;
mod tuning;

pub use methods::{
    clipped_round, Asgd, ClippedRound, MindFlayer, Minibatch, Rennala, RoundStats, Vecna,
};
pub use queue::{Event, EventQueue};
pub use registry::{
    BatchSpec, BuiltMethod, ClipSpec, GammaSpec, MethodContext, MethodRegistry, Tuning,
};
pub use tuning::{
    default_batch_grid, default_gamma_grid, median_score, tune_gamma, tune_rennala, TuneResult,
    TuneRow,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("x0 has length {got}, problem dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("plan covers {got} workers, cluster has {expected}")]
    PlanMismatch { expected: usize, got: usize },
    #[error("problem has {components} components but the cluster has {workers} workers")]
    ComponentMismatch { components: usize, workers: usize },
    #[error("iterate diverged at k = {k} (time {time}): squared gradient norm is {value}")]
    Diverged { k: u64, time: f64, value: f64 },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("invalid parameters for {method}: {message}")]
    InvalidParams { method: String, message: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

impl EngineError {
    /// Stable snake_case name of the variant; planner errors report their own.
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::DimensionMismatch { .. } => "dimension_mismatch",
            EngineError::PlanMismatch { .. } => "plan_mismatch",
            EngineError::ComponentMismatch { .. } => "component_mismatch",
            EngineError::Diverged { .. } => "diverged",
            EngineError::InvalidConfig(_) => "invalid_config",
            EngineError::UnknownMethod(_) => "unknown_method",
            EngineError::InvalidParams { .. } => "invalid_params",
            EngineError::Plan(e) => e.kind(),
        }
    }
}

/// What is being simulated: the problem and the cluster running it.
#[derive(Clone, Copy)]
pub struct Scenario<'a> {
    pub workload: &'a dyn Workload,
    pub cluster: &'a ClusterModel,
}

impl<'a> Scenario<'a> {
    pub fn new(workload: &'a dyn Workload, cluster: &'a ClusterModel) -> Self {
        Scenario { workload, cluster }
    }

    pub fn objective(&self) -> &'a dyn Oracle {
        self.workload.objective()
    }
}

/// Which convergence criterion ends a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Running mean of `||grad f(x^j)||^2` over `j = 0..=k` at most `eps`.
    #[default]
    RunningMean,
    /// First iterate with `||grad f(x^k)||^2 <= eps`.
    FirstHit,
    /// Run until a budget runs out; both hits are still recorded.
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Starting point; zeros when absent.
    pub x0: Option<Vec<f64>>,
    pub eps: f64,
    pub time_budget: ExtendedTime,
    pub iter_budget: u64,
    pub stop: StopRule,
}

impl RunConfig {
    pub fn new(eps: f64, time_budget: ExtendedTime, iter_budget: u64) -> Self {
        RunConfig {
            x0: None,
            eps,
            time_budget,
            iter_budget,
            stop: StopRule::RunningMean,
        }
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(EngineError::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if self.time_budget.value() <= 0.0 {
            return Err(EngineError::InvalidConfig("time budget must be positive".into()));
        }
        if self.iter_budget == 0 {
            return Err(EngineError::InvalidConfig("iteration budget must be positive".into()));
        }
        Ok(())
    }

    pub fn initial_point(&self, dim: usize) -> Result<Vec<f64>, EngineError> {
        match &self.x0 {
            None => Ok(vec![0.0; dim]),
            Some(x) if x.len() == dim => Ok(x.clone()),
            Some(x) => Err(EngineError::DimensionMismatch {
                expected: dim,
                got: x.len(),
            }),
        }
    }
}

/// One trace line; row 0 is the starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: u64,
    pub time: f64,
    pub grad_sq_norm: f64,
    pub f_value: f64,
    pub gradients_used: u64,
    pub trials_attempted: u64,
    pub discarded_stale: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub k: u64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Converged { k: u64, time: f64 },
    Stalled { time: f64 },
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub gamma: f64,
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
    pub first_hit: Option<Hit>,
    pub mean_hit: Option<Hit>,
    pub final_time: f64,
    /// Per-update delays `delta_k`; only filled by asynchronous SGD.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub staleness: Vec<u64>,
}

impl RunRecord {
    /// Virtual time of the first iterate with `||grad f||^2 <= eps`, or `+inf`.
    pub fn time_to_first_hit(&self) -> f64 {
        self.first_hit.map_or(f64::INFINITY, |h| h.time)
    }

    pub fn iterations(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.k)
    }
}

/// A simulated optimization method.
pub trait Method: Send + Sync {
    fn name(&self) -> &str;
    fn gamma(&self) -> f64;
    /// Same method with another stepsize.
    fn with_gamma(&self, gamma: f64) -> Box<dyn Method>;
    /// Resolved parameters for output sidecars.
    fn describe(&self) -> serde_json::Value;
    fn run(&self, scenario: &Scenario<'_>, cfg: &RunConfig, seed: u64)
        -> Result<RunRecord, EngineError>;
}

/// Per-worker random streams: delays and gradient noise, each consumed in
/// that worker's own sequential order.
pub struct WorkerStreams {
    pub delay: Vec<SimRng>,
    pub noise: Vec<SimRng>,
}

impl WorkerStreams {
    pub fn new(seed: u64, n: usize) -> Self {
        WorkerStreams {
            delay: (0..n).map(|i| stream(seed, &[i as u64, purpose::DELAY])).collect(),
            noise: (0..n).map(|i| stream(seed, &[i as u64, purpose::NOISE])).collect(),
        }
    }
}

enum Progress {
    Continue,
    Stop(RunStatus),
}

/// Trace bookkeeping shared by all methods.
struct Recorder<'a> {
    objective: &'a dyn Oracle,
    cfg: &'a RunConfig,
    rows: Vec<TraceRow>,
    grad: Vec<f64>,
    sum_sq: f64,
    first_hit: Option<Hit>,
    mean_hit: Option<Hit>,
}

impl<'a> Recorder<'a> {
    fn new(objective: &'a dyn Oracle, cfg: &'a RunConfig) -> Self {
        Recorder {
            objective,
            cfg,
            rows: Vec::new(),
            grad: vec![0.0; objective.dim()],
            sum_sq: 0.0,
            first_hit: None,
            mean_hit: None,
        }
    }

    fn record(
        &mut self,
        x: &[f64],
        time: f64,
        used: u64,
        trials: u64,
        discarded: u64,
    ) -> Result<Progress, EngineError> {
        let k = self.rows.len() as u64;
        self.objective.grad_into(x, &mut self.grad);
        let g2: f64 = self.grad.iter().map(|v| v * v).sum();
        if !g2.is_finite() {
            return Err(EngineError::Diverged { k, time, value: g2 });
        }
        self.rows.push(TraceRow {
            k,
            time,
            grad_sq_norm: g2,
            f_value: self.objective.value(x),
            gradients_used: used,
            trials_attempted: trials,
            discarded_stale: discarded,
        });
        self.sum_sq += g2;
        let eps = self.cfg.eps;
        if self.first_hit.is_none() && g2 <= eps {
            self.first_hit = Some(Hit { k, time });
        }
        if self.mean_hit.is_none() && self.sum_sq / (k + 1) as f64 <= eps {
            self.mean_hit = Some(Hit { k, time });
        }
        let hit = match self.cfg.stop {
            StopRule::RunningMean => self.mean_hit,
            StopRule::FirstHit => self.first_hit,
            StopRule::Never => None,
        };
        if let Some(h) = hit {
            return Ok(Progress::Stop(RunStatus::Converged { k: h.k, time: h.time }));
        }
        if k >= self.cfg.iter_budget {
            return Ok(Progress::Stop(RunStatus::BudgetExhausted));
        }
        Ok(Progress::Continue)
    }

    fn finish(
        self,
        method: &str,
        seed: u64,
        gamma: f64,
        status: RunStatus,
        final_time: f64,
        staleness: Vec<u64>,
    ) -> RunRecord {
        RunRecord {
            method: method.to_string(),
            seed,
            gamma,
            rows: self.rows,
            status,
            first_hit: self.first_hit,
            mean_hit: self.mean_hit,
            final_time,
            staleness,
        }
    }
}

/// `Delta = f(x0) - f_inf`, `L` and `sigma^2` of `objective` at target `eps`.
pub fn problem_constants(objective: &dyn Oracle, x0: &[f64], eps: f64) -> ProblemConstants {
    ProblemConstants {
        delta: objective.value(x0) - objective.f_inf(),
        smoothness: objective.smoothness(),
        sigma_sq: objective.sigma_sq(),
        eps,
    }
}

/// `x <- x - step * g`.
fn axpy(x: &mut [f64], step: f64, g: &[f64]) {
    x.iter_mut().zip(g).for_each(|(xi, gi)| *xi -= step * gi);
}
