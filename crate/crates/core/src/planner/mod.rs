//! Theoretical run parameters: stepsizes, iteration counts, per-worker trial
//! counts and clip times, plus the single-device comparison formulas.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timemodel::TimeModelError;

mod clip;
mod mindflayer;
mod single_device;
mod vecna;

pub use clip::{
    choose_clip_times_median, choose_clip_times_optimize, choose_clip_times_quantile,
    default_quantile_grid, mindflayer_objective, optimize_single_device_clip, ClipChoice,
};
pub use mindflayer::{minibatch_round_time, mindflayer_plan, time_profile, MindFlayerPlan};
pub use single_device::{prop2_ratio, single_device_times, SingleDeviceTimes};
pub use vecna::{vecna_plan, VecnaPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("clip time of worker {worker} must be finite and nonnegative, got {value}")]
    InvalidClipTime { worker: usize, value: f64 },
    #[error("expected {expected} clip times, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no worker can ever succeed: every success probability F_i(t_i) is zero")]
    NoSuccessPossible,
    #[error("worker {worker} has success probability zero at t = {t}; every worker must be able to succeed")]
    ZeroSuccessProbability { worker: usize, t: f64 },
    #[error("worker {worker} has an infinite median delay; use the optimizer or an explicit quantile level")]
    InfiniteMedian { worker: usize },
    #[error("quantile grid must be nonempty with levels in (0, 1)")]
    InvalidGrid,
    #[error(transparent)]
    TimeModel(#[from] TimeModelError),
}

impl PlanError {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            PlanError::NonPositive { .. } => "non_positive",
            PlanError::InvalidClipTime { .. } => "invalid_clip_time",
            PlanError::LengthMismatch { .. } => "length_mismatch",
            PlanError::NoSuccessPossible => "no_success_possible",
            PlanError::ZeroSuccessProbability { .. } => "zero_success_probability",
            PlanError::InfiniteMedian { .. } => "infinite_median",
            PlanError::InvalidGrid => "invalid_grid",
            PlanError::TimeModel(_) => "time_model",
        }
    }
}

/// `Delta`, `L`, `sigma^2` and the target `eps` shared by every formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub delta: f64,
    pub smoothness: f64,
    pub sigma_sq: f64,
    pub eps: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<(), PlanError> {
        positive("delta", self.delta)?;
        positive("L", self.smoothness)?;
        positive("eps", self.eps)?;
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(PlanError::NonPositive {
                name: "sigma_sq",
                value: self.sigma_sq,
            });
        }
        Ok(())
    }

    /// `S = max{1, sigma^2 / eps}`.
    pub fn batch_target(&self) -> f64 {
        batch_target(self.sigma_sq, self.eps)
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), PlanError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(PlanError::NonPositive { name, value })
    }
}

/// `S = max{1, sigma^2 / eps}`.
pub fn batch_target(sigma_sq: f64, eps: f64) -> f64 {
    (sigma_sq / eps).max(1.0)
}

/// Ceiling that forgives rounding noise just above an integer, so that an
/// exact integer computed in floating point is not bumped to the next one.
pub(crate) fn snapped_ceil(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r
    } else {
        v.ceil()
    }
}

/// Unrounded `max{1, sigma^2/(eps B)} * 8 L Delta / eps`.
pub fn sgd_iteration_bound(delta: f64, smoothness: f64, sigma_sq: f64, eps: f64, batch: f64) -> f64 {
    (sigma_sq / (eps * batch)).max(1.0) * 8.0 * smoothness * delta / eps
}

/// Iterations for the minibatch-style estimator with expected batch
/// `b_expected` to reach an `eps`-stationary average gradient norm.
pub fn mindflayer_iters(
    delta: f64,
    smoothness: f64,
    sigma_sq: f64,
    eps: f64,
    b_expected: f64,
) -> Result<u64, PlanError> {
    ProblemConstants {
        delta,
        smoothness,
        sigma_sq,
        eps,
    }
    .validate()?;
    positive("B_expected", b_expected)?;
    Ok(snapped_ceil(sgd_iteration_bound(delta, smoothness, sigma_sq, eps, b_expected)) as u64)
}

/// `(1/2L) min{1, eps B / sigma^2}`; `sigma^2 = 0` selects the first branch.
pub fn mindflayer_gamma(smoothness: f64, eps: f64, sigma_sq: f64, b_expected: f64) -> f64 {
    let ratio = if sigma_sq == 0.0 {
        f64::INFINITY
    } else {
        eps * b_expected / sigma_sq
    };
    ratio.min(1.0) / (2.0 * smoothness)
}

/// Same formula as [`mindflayer_iters`] with a fixed batch `s_batch`.
pub fn rennala_iters(
    delta: f64,
    smoothness: f64,
    sigma_sq: f64,
    eps: f64,
    s_batch: u64,
) -> Result<u64, PlanError> {
    if s_batch == 0 {
        return Err(PlanError::NonPositive {
            name: "S",
            value: 0.0,
        });
    }
    mindflayer_iters(delta, smoothness, sigma_sq, eps, s_batch as f64)
}
