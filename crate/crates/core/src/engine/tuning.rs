use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EngineError, Method, Rennala, RunConfig, Scenario, StopRule};
use crate::timemodel::ExtendedTime;

/// `2^j / (2L)` for `j = -6..=4`.
pub fn default_gamma_grid(smoothness: f64) -> Vec<f64> {
    (-6..=4).map(|j| 2f64.powi(j) / (2.0 * smoothness)).collect()
}

/// `1, 2, 4, ..., 2^max_exp`.
pub fn default_batch_grid(max_exp: u32) -> Vec<u64> {
    (0..=max_exp).map(|j| 1u64 << j).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub gamma: f64,
    #[serde(rename = "S", skip_serializing_if = "Option::is_none")]
    pub batch: Option<u64>,
    /// Median time to first hit over seeds; `+inf` if most runs never hit.
    pub score: f64,
    pub converged_runs: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    /// `None` means no convergent stepsize on the grid.
    pub best: Option<TuneRow>,
    pub table: Vec<TuneRow>,
}

impl TuneResult {
    pub fn gamma(&self) -> Option<f64> {
        self.best.as_ref().map(|r| r.gamma)
    }
}

/// Median of first-hit times; an even count averages the middle pair.
pub fn median_score(times: &[f64]) -> f64 {
    if times.is_empty() {
        return f64::INFINITY;
    }
    let mut v = times.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn score_runs(
    method: &dyn Method,
    scenario: &Scenario<'_>,
    cfg: &RunConfig,
    seeds: &[u64],
) -> Result<(f64, usize), EngineError> {
    let times = seeds
        .par_iter()
        .map(|&seed| match method.run(scenario, cfg, seed) {
            Ok(rec) => Ok(rec.time_to_first_hit()),
            Err(EngineError::Diverged { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<f64>, EngineError>>()?;
    let converged = times.iter().filter(|t| t.is_finite()).count();
    Ok((median_score(&times), converged))
}

fn pick_best(table: &[TuneRow]) -> Option<TuneRow> {
    // Rows arrive in ascending parameter order; strict `<` keeps the smaller.
    let mut best: Option<&TuneRow> = None;
    for row in table {
        if row.score.is_finite() && best.is_none_or(|b| row.score < b.score) {
            best = Some(row);
        }
    }
    best.cloned()
}

/// Time budget that cannot change the winner: a candidate beats `best` only
/// if its median is below it, which for an even seed count needs the upper
/// middle run to finish before `2 best`.
fn pruned_budget(budget: ExtendedTime, best: f64, seeds: usize) -> ExtendedTime {
    let cap = if seeds % 2 == 1 { best } else { 2.0 * best };
    match ExtendedTime::new(cap) {
        Ok(cap) if cap < budget => cap,
        _ => budget,
    }
}

fn gamma_rows(
    method: &dyn Method,
    scenario: &Scenario<'_>,
    cfg: &RunConfig,
    grid: &[f64],
    seeds: &[u64],
    best: &mut f64,
) -> Result<Vec<TuneRow>, EngineError> {
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut cfg = cfg.clone().with_stop(StopRule::FirstHit);
    let budget = cfg.time_budget;
    let mut rows = Vec::with_capacity(grid.len());
    for gamma in grid {
        cfg.time_budget = pruned_budget(budget, *best, seeds.len());
        let (score, converged_runs) = score_runs(method.with_gamma(gamma).as_ref(), scenario, &cfg, seeds)?;
        if score < *best {
            *best = score;
        }
        rows.push(TuneRow {
            gamma,
            batch: None,
            score,
            converged_runs,
            runs: seeds.len(),
        });
    }
    Ok(rows)
}

fn check_grid(grid: &[f64], seeds: &[u64]) -> Result<(), EngineError> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(EngineError::InvalidConfig("tuning needs a nonempty grid and seed list".into()));
    }
    Ok(())
}

/// Grid search on the stepsize, scored by median virtual time to first hit.
///
/// Runs stop at the first hit; diverging runs score `+inf`. Once some
/// stepsize has a finite score, later runs are cut off at the time past
/// which they could no longer win, so losing rows may show `+inf` and fewer
/// converged runs than an exhaustive search. The chosen row is unaffected.
pub fn tune_gamma(
    method: &dyn Method,
    scenario: &Scenario<'_>,
    cfg: &RunConfig,
    grid: &[f64],
    seeds: &[u64],
) -> Result<TuneResult, EngineError> {
    check_grid(grid, seeds)?;
    let mut best = f64::INFINITY;
    let table = gamma_rows(method, scenario, cfg, grid, seeds, &mut best)?;
    Ok(TuneResult {
        best: pick_best(&table),
        table,
    })
}

/// Joint grid search over Rennala's `S` and stepsize, with the same pruning
/// as [`tune_gamma`].
pub fn tune_rennala(
    scenario: &Scenario<'_>,
    cfg: &RunConfig,
    batches: &[u64],
    gammas: &[f64],
    seeds: &[u64],
) -> Result<TuneResult, EngineError> {
    check_grid(gammas, seeds)?;
    let mut batches = batches.to_vec();
    batches.sort_unstable();
    let mut table = Vec::new();
    let mut best = f64::INFINITY;
    for &s in &batches {
        let base = Rennala::new(s, 1.0)?;
        let rows = gamma_rows(&base, scenario, cfg, gammas, seeds, &mut best)?;
        table.extend(rows.into_iter().map(|mut row| {
            row.batch = Some(s);
            row
        }));
    }
    Ok(TuneResult {
        best: pick_best(&table),
        table,
    })
}
