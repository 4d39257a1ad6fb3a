use serde::{Deserialize, Serialize};

use super::{
    mindflayer_gamma, mindflayer_iters, snapped_ceil, PlanError, ProblemConstants,
};
use crate::rng::SimRng;
use crate::timemodel::{ClusterModel, ExtendedTime};

/// Trial counts, clip times and the predicted time budget for MindFlayer SGD.
/// Vectors are indexed by the original worker order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MindFlayerPlan {
    pub t: Vec<f64>,
    #[serde(rename = "B")]
    pub trials: Vec<u64>,
    pub p: Vec<f64>,
    #[serde(rename = "B_expected")]
    pub b_expected: f64,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub iterations: u64,
    /// Number of workers that receive trials (1-based count).
    pub m_star: usize,
    pub time_bound: f64,
    /// `t(m)` for `m = 1..=n`, in sorted worker order.
    pub t_of_m: Vec<f64>,
    /// Worker indices sorted by `tau_i + t_i` (ties by index).
    pub order: Vec<usize>,
}

impl MindFlayerPlan {
    /// Upper bound on one round: `max_i B_i (tau_i + t_i)`.
    pub fn round_time_bound(&self, taus: &[f64]) -> f64 {
        self.trials
            .iter()
            .zip(taus.iter().zip(&self.t))
            .map(|(&b, (tau, t))| b as f64 * (tau + t))
            .fold(0.0, f64::max)
    }
}

/// Sort order and `t(m)` values for given per-worker `tau_i + t_i` and `p_i`.
///
/// `t(m) = (sum_{j<=m} p_j/(tau_j+t_j))^{-1} (S + sum_{j<=m} p_j)` over the
/// first `m` workers in ascending `tau + t` order; `+inf` while the prefix has
/// no success probability.
pub fn time_profile(durations: &[f64], p: &[f64], s: f64) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| durations[a].total_cmp(&durations[b]).then(a.cmp(&b)));
    let mut rate = 0.0;
    let mut mass = 0.0;
    let t_of_m = order
        .iter()
        .map(|&j| {
            rate += p[j] / durations[j];
            mass += p[j];
            if rate > 0.0 {
                (s + mass) / rate
            } else {
                f64::INFINITY
            }
        })
        .collect();
    (order, t_of_m)
}

/// Index of the first minimum.
pub(crate) fn first_argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn validate_clip_times(cluster: &ClusterModel, t: &[f64]) -> Result<(), PlanError> {
    if t.len() != cluster.len() {
        return Err(PlanError::LengthMismatch {
            expected: cluster.len(),
            got: t.len(),
        });
    }
    for (worker, &value) in t.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(PlanError::InvalidClipTime { worker, value });
        }
    }
    Ok(())
}

pub(crate) fn success_probabilities(cluster: &ClusterModel, t: &[f64]) -> Vec<f64> {
    cluster
        .workers()
        .iter()
        .zip(t)
        .map(|(w, &ti)| w.delay.cdf(ExtendedTime::new(ti).expect("validated")))
        .collect()
}

/// Build the MindFlayer plan for clip times `t`.
pub fn mindflayer_plan(
    cluster: &ClusterModel,
    t: &[f64],
    constants: &ProblemConstants,
) -> Result<MindFlayerPlan, PlanError> {
    constants.validate()?;
    validate_clip_times(cluster, t)?;
    let p = success_probabilities(cluster, t);
    if p.iter().all(|&pi| pi == 0.0) {
        return Err(PlanError::NoSuccessPossible);
    }
    let durations: Vec<f64> = cluster
        .workers()
        .iter()
        .zip(t)
        .map(|(w, ti)| w.tau + ti)
        .collect();
    let s = constants.batch_target();
    let (order, t_of_m) = time_profile(&durations, &p, s);
    let m_idx = first_argmin(&t_of_m);
    let t_star = t_of_m[m_idx];

    let mut trials = vec![0u64; cluster.len()];
    for &i in &order[..=m_idx] {
        let b = t_star / durations[i] - 1.0;
        trials[i] = snapped_ceil(b).max(0.0) as u64;
    }
    let b_expected: f64 = trials.iter().zip(&p).map(|(&b, pi)| b as f64 * pi).sum();
    let iterations = mindflayer_iters(
        constants.delta,
        constants.smoothness,
        constants.sigma_sq,
        constants.eps,
        b_expected,
    )?;
    let gamma = mindflayer_gamma(constants.smoothness, constants.eps, constants.sigma_sq, b_expected);
    let time_bound = t_star * 8.0 * constants.delta * constants.smoothness / constants.eps;

    Ok(MindFlayerPlan {
        t: t.to_vec(),
        trials,
        p,
        b_expected,
        gamma,
        iterations,
        m_star: m_idx + 1,
        time_bound,
        t_of_m,
        order,
    })
}

/// One synchronous round: `max_i (tau_i + eta_i)`.
pub fn minibatch_round_time(cluster: &ClusterModel, rng: &mut SimRng) -> ExtendedTime {
    cluster
        .workers()
        .iter()
        .map(|w| w.sample_compute_time(rng))
        .fold(ExtendedTime::ZERO, ExtendedTime::max)
}
