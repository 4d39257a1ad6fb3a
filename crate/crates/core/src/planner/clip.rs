use serde::{Deserialize, Serialize};

use super::mindflayer::{first_argmin, time_profile};
use super::PlanError;
use crate::timemodel::{ClusterModel, DelayDistribution, ExtendedTime};

/// Clip times chosen by a selection rule together with the objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipChoice {
    pub t: Vec<f64>,
    pub m_star: usize,
    /// `min_m t(m)` at the chosen clip times.
    pub value: f64,
}

/// Levels `0.02, 0.04, ..., 0.98`.
pub fn default_quantile_grid() -> Vec<f64> {
    (1..50).map(|k| k as f64 * 0.02).collect()
}

/// `(min_m t(m), m*)` for clip times `t` and batch target `s`.
pub fn mindflayer_objective(cluster: &ClusterModel, t: &[f64], s: f64) -> (f64, usize) {
    let mut durations = Vec::with_capacity(t.len());
    let mut p = Vec::with_capacity(t.len());
    for (w, &ti) in cluster.workers().iter().zip(t) {
        durations.push(w.tau + ti);
        p.push(w.delay.cdf(ExtendedTime(ti)));
    }
    let (_, t_of_m) = time_profile(&durations, &p, s);
    let m = first_argmin(&t_of_m);
    (t_of_m[m], m + 1)
}

/// `t_i = Q_i(level)` for every worker.
pub fn choose_clip_times_quantile(cluster: &ClusterModel, level: f64) -> Result<Vec<f64>, PlanError> {
    cluster
        .workers()
        .iter()
        .enumerate()
        .map(|(worker, w)| {
            let q = w.delay.quantile(level)?;
            q.as_finite().ok_or(PlanError::InfiniteMedian { worker })
        })
        .collect()
}

/// `t_i = Med(eta_i)`.
pub fn choose_clip_times_median(cluster: &ClusterModel) -> Result<Vec<f64>, PlanError> {
    choose_clip_times_quantile(cluster, 0.5)
}

fn check_grid(grid: &[f64]) -> Result<(), PlanError> {
    if grid.is_empty() || grid.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
        Err(PlanError::InvalidGrid)
    } else {
        Ok(())
    }
}

/// Candidate clip values for one worker: finite grid quantiles for continuous
/// laws, jump points for discrete ones.
fn candidates(delay: &DelayDistribution, grid: &[f64]) -> Vec<f64> {
    match delay.jump_points() {
        Some(points) => points,
        None => grid
            .iter()
            .filter_map(|&g| delay.quantile(g).ok().and_then(ExtendedTime::as_finite))
            .collect(),
    }
}

const GOLDEN_STEPS: usize = 40;
const MAX_SWEEPS: usize = 50;

/// Golden-section search for the minimum of `f` on `[lo, hi]`.
fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..GOLDEN_STEPS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Bracket in probability space around grid entry `j`.
fn bracket(grid: &[f64], j: usize) -> (f64, f64) {
    let lo = if j == 0 { 0.5 * grid[0] } else { grid[j - 1] };
    let hi = if j + 1 == grid.len() {
        0.5 * (1.0 + grid[j])
    } else {
        grid[j + 1]
    };
    (lo, hi)
}

/// Coordinate descent on `min_m t(m)` from one start.
fn descend(cluster: &ClusterModel, s: f64, grid: &[f64], start: Vec<f64>) -> (Vec<f64>, f64) {
    let mut t = start;
    let mut best = mindflayer_objective(cluster, &t, s).0;
    for _ in 0..MAX_SWEEPS {
        let before = best;
        for (i, w) in cluster.workers().iter().enumerate() {
            let cands = candidates(&w.delay, grid);
            let mut best_j = None;
            for (j, &c) in cands.iter().enumerate() {
                let old = std::mem::replace(&mut t[i], c);
                let v = mindflayer_objective(cluster, &t, s).0;
                if v < best {
                    best = v;
                    best_j = Some(j);
                } else {
                    t[i] = old;
                }
            }
            if w.delay.jump_points().is_some() {
                continue;
            }
            // Refine around the incumbent's grid position.
            let u_now = w.delay.cdf(ExtendedTime(t[i]));
            let j = best_j.unwrap_or_else(|| {
                grid.iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - u_now).abs().total_cmp(&(b.1 - u_now).abs()))
                    .map(|(j, _)| j)
                    .unwrap_or(0)
            });
            let (lo, hi) = bracket(grid, j);
            let eval = |u: f64| match w.delay.quantile(u).ok().and_then(ExtendedTime::as_finite) {
                Some(ti) => {
                    let mut trial = t.clone();
                    trial[i] = ti;
                    mindflayer_objective(cluster, &trial, s).0
                }
                None => f64::INFINITY,
            };
            let (u, v) = golden_min(lo, hi, eval);
            if v < best {
                best = v;
                t[i] = w.delay.quantile(u).expect("bracket inside (0,1)").value();
            }
        }
        let improved = best < before * (1.0 - 1e-12);
        if !improved {
            break;
        }
    }
    (t, best)
}

/// Minimize `min_m t(m)` over clip times by multi-start coordinate descent.
///
/// Starts from each diagonal grid point `t_i = Q_i(g)` and from the medians.
/// The result is never worse than the best diagonal grid candidate.
pub fn choose_clip_times_optimize(
    cluster: &ClusterModel,
    s: f64,
    grid: &[f64],
) -> Result<ClipChoice, PlanError> {
    check_grid(grid)?;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let mut levels: Vec<f64> = grid.to_vec();
    if !levels.contains(&0.5) {
        levels.push(0.5);
    }
    for &g in &levels {
        let start: Option<Vec<f64>> = cluster
            .workers()
            .iter()
            .map(|w| match w.delay.jump_points() {
                Some(points) => points.first().copied(),
                None => w.delay.quantile(g).ok().and_then(ExtendedTime::as_finite),
            })
            .collect();
        if let Some(start) = start {
            starts.push(start);
        }
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut best_start = f64::INFINITY;
    for start in starts {
        best_start = best_start.min(mindflayer_objective(cluster, &start, s).0);
        let (t, v) = descend(cluster, s, grid, start);
        if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
            best = Some((t, v));
        }
    }
    let (t, value) = best.ok_or(PlanError::InvalidGrid)?;
    if !value.is_finite() {
        return Err(PlanError::NoSuccessPossible);
    }
    debug_assert!(value <= best_start);
    let m_star = mindflayer_objective(cluster, &t, s).1;
    Ok(ClipChoice { t, m_star, value })
}

/// Minimize `(tau + t) / F(t)` for a single worker. Returns `(t*, value)`.
pub fn optimize_single_device_clip(
    tau: f64,
    delay: &DelayDistribution,
    grid: &[f64],
) -> Result<(f64, f64), PlanError> {
    check_grid(grid)?;
    let objective = |t: f64| {
        let p = delay.cdf(ExtendedTime(t));
        if p > 0.0 {
            (tau + t) / p
        } else {
            f64::INFINITY
        }
    };
    let cands = candidates(delay, grid);
    let (mut best_t, mut best_v) = (f64::NAN, f64::INFINITY);
    let mut best_j = 0;
    for (j, &c) in cands.iter().enumerate() {
        let v = objective(c);
        if v < best_v {
            best_t = c;
            best_v = v;
            best_j = j;
        }
    }
    if delay.jump_points().is_none() && best_v.is_finite() {
        let (lo, hi) = bracket(grid, best_j);
        let (u, v) = golden_min(lo, hi, |u| match delay.quantile(u) {
            Ok(q) if q.is_finite() => objective(q.value()),
            _ => f64::INFINITY,
        });
        if v < best_v {
            best_v = v;
            best_t = delay.quantile(u).expect("inside (0,1)").value();
        }
    }
    if best_v.is_finite() {
        Ok((best_t, best_v))
    } else {
        Err(PlanError::NoSuccessPossible)
    }
}
