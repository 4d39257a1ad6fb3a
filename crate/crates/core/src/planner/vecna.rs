use serde::{Deserialize, Serialize};

use super::mindflayer::{success_probabilities, validate_clip_times};
use super::{snapped_ceil, PlanError, ProblemConstants};
use crate::timemodel::ClusterModel;

/// Plan for Vecna SGD, which normalizes each worker's sum by `p_i B_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecnaPlan {
    pub t: Vec<f64>,
    #[serde(rename = "B")]
    pub trials: Vec<u64>,
    pub p: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub iterations: u64,
    /// Per-round time target.
    #[serde(rename = "T")]
    pub round_target: f64,
    pub time_bound: f64,
}

/// `alpha = (L/n^2) sum (1-p_i)/(p_i B_i)` and `zeta = (sigma^2/n^2) sum 1/(p_i B_i)`.
pub(crate) fn vecna_moments(p: &[f64], trials: &[u64], smoothness: f64, sigma_sq: f64) -> (f64, f64) {
    let n2 = (p.len() * p.len()) as f64;
    let mut a = 0.0;
    let mut z = 0.0;
    for (&pi, &b) in p.iter().zip(trials) {
        let pb = pi * b as f64;
        a += (1.0 - pi) / pb;
        z += 1.0 / pb;
    }
    (smoothness * a / n2, sigma_sq * z / n2)
}

pub fn vecna_plan(
    cluster: &ClusterModel,
    t: &[f64],
    constants: &ProblemConstants,
) -> Result<VecnaPlan, PlanError> {
    constants.validate()?;
    validate_clip_times(cluster, t)?;
    let p = success_probabilities(cluster, t);
    if let Some(worker) = p.iter().position(|&pi| pi == 0.0) {
        return Err(PlanError::ZeroSuccessProbability {
            worker,
            t: t[worker],
        });
    }
    let ProblemConstants {
        delta,
        smoothness,
        sigma_sq,
        eps,
    } = *constants;
    let n = cluster.len() as f64;
    let durations: Vec<f64> = cluster
        .workers()
        .iter()
        .zip(t)
        .map(|(w, ti)| w.tau + ti)
        .collect();
    let slowest = durations.iter().copied().fold(0.0, f64::max);
    let inv_p_time = durations.iter().zip(&p).map(|(d, pi)| d / pi).sum::<f64>() / n;
    let fail_time = durations
        .iter()
        .zip(&p)
        .map(|(d, pi)| (1.0 - pi) / pi * d)
        .sum::<f64>()
        / n;
    let round_target =
        slowest + inv_p_time * sigma_sq / (n * eps) + fail_time * delta * smoothness / (n * eps);

    let trials: Vec<u64> = durations
        .iter()
        .map(|d| snapped_ceil(round_target / d).max(1.0) as u64)
        .collect();
    let (alpha, zeta) = vecna_moments(&p, &trials, smoothness, sigma_sq);
    let beta: f64 = 1.0;
    let k_real = 12.0 * delta * smoothness / eps
        * beta.max(12.0 * delta * alpha / eps).max(2.0 * zeta / eps);
    let iterations = snapped_ceil(k_real) as u64;
    let inv = |v: f64| if v > 0.0 { 1.0 / v } else { f64::INFINITY };
    let gamma = inv((smoothness * alpha * iterations as f64).sqrt())
        .min(1.0 / (smoothness * beta))
        .min(eps * inv(2.0 * smoothness * zeta));
    let time_bound = 2.0 * round_target * iterations as f64;

    Ok(VecnaPlan {
        t: t.to_vec(),
        trials,
        p,
        alpha,
        beta,
        zeta,
        gamma,
        iterations,
        round_target,
        time_bound,
    })
}
