use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use hetsgd_core::engine::{median_score, EngineError, RunRecord, RunStatus, Scenario, TuneResult};
use hetsgd_core::timemodel::ExtendedTime;

use super::{resolve, ErrorInfo, Report, ResolvedMethod};
use crate::config::{ExperimentConfig, Setup};
use crate::output::{
    json_bytes, sidecar_path, thinned_rows, trace_csv, trace_json, trace_path, write_atomic,
    Format, Provenance, RunSidecar, RunSummary,
};

/// Median, minimum and maximum over seeds; `inf` for runs that never got there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: ExtendedTime,
    pub min: ExtendedTime,
    pub max: ExtendedTime,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let ext = |v: f64| ExtendedTime::new(v).unwrap_or(ExtendedTime::INFINITY);
        Some(Stats {
            median: ext(median_score(values)),
            min: ext(values.iter().copied().fold(f64::INFINITY, f64::min)),
            max: ext(values.iter().copied().fold(0.0, f64::max)),
        })
    }
}

/// Mean, minimum and maximum of `||grad f||^2` over seeds on the time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub seed: u64,
    #[serde(flatten)]
    pub error: ErrorInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub label: String,
    /// Resolved parameters; absent when the method could not be built.
    pub params: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuneResult>,
    pub runs: usize,
    pub converged: usize,
    pub stalled: usize,
    pub budget_exhausted: usize,
    pub errors: Vec<RunError>,
    /// Time at which the stopping rule fired.
    pub time_to_eps: Option<Stats>,
    /// Time of the first iterate with `||grad f||^2 <= eps`.
    pub first_hit_time: Option<Stats>,
    pub grad_sq_norm: Option<Band>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub provenance: Provenance,
    pub seeds: Vec<u64>,
    pub time_grid: Vec<f64>,
    pub methods: Vec<MethodSummary>,
}

/// `(time, ||grad f||^2)` per trace row.
type Curve = Vec<(f64, f64)>;

struct Outcome {
    seed: u64,
    result: Result<(RunSummary, Curve), EngineError>,
}

fn value_at(curve: &Curve, t: f64) -> f64 {
    let i = curve.partition_point(|&(time, _)| time <= t);
    curve[i.saturating_sub(1)].1
}

fn write_run(
    dir: &Path,
    format: Format,
    cfg: &ExperimentConfig,
    hash: &str,
    m: &ResolvedMethod,
    rec: &RunRecord,
) -> Result<()> {
    let prov = Provenance::new(hash, rec.seed);
    let rows = thinned_rows(&rec.rows, cfg.output.trace_stride);
    let bytes = match format {
        Format::Csv => trace_csv(&prov, &rows),
        Format::Json => trace_json(&prov, &rows)?,
    };
    write_atomic(&trace_path(dir, &m.label, rec.seed, format), &bytes)?;
    let sidecar = RunSidecar {
        provenance: prov,
        label: m.label.clone(),
        method: m.method.describe(),
        record: RunSummary::from(rec),
    };
    write_atomic(
        &sidecar_path(dir, &m.label, rec.seed),
        &json_bytes(&sidecar)?,
    )
}

/// Run every method for every seed; write traces, sidecars and a summary.
pub fn simulate(cfg: &ExperimentConfig, dir: &Path, format: Format) -> Result<(Report, Summary)> {
    let hash = cfg.hash();
    let setup = Setup::new(cfg)?;
    let scenario = Scenario::new(&setup.problem, &setup.cluster);
    let run_cfg = cfg.run_config();

    let resolved: Vec<Result<ResolvedMethod, EngineError>> = cfg
        .methods
        .iter()
        .map(|e| resolve(e, cfg, &setup))
        .collect();

    let jobs: Vec<(usize, u64)> = resolved
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_ok())
        .flat_map(|(i, _)| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes: Vec<(usize, Outcome)> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let m = resolved[i].as_ref().expect("filtered");
            let result = match m.method.run(&scenario, &run_cfg, seed) {
                Ok(rec) => {
                    write_run(dir, format, cfg, &hash, m, &rec)?;
                    let curve = rec.rows.iter().map(|r| (r.time, r.grad_sq_norm)).collect();
                    Ok((RunSummary::from(&rec), curve))
                }
                Err(e) => Err(e),
            };
            Ok((i, Outcome { seed, result }))
        })
        .collect::<Result<_>>()?;

    let t_max = outcomes
        .iter()
        .filter_map(|(_, o)| o.result.as_ref().ok())
        .map(|(s, _)| s.final_time)
        .filter(|t| t.is_finite())
        .fold(0.0, f64::max);
    let points = cfg.output.summary_points;
    let time_grid: Vec<f64> = (0..points)
        .map(|j| t_max * j as f64 / (points - 1) as f64)
        .collect();

    let mut report = Report::default();
    let mut methods = Vec::with_capacity(resolved.len());
    for (i, (entry, r)) in cfg.methods.iter().zip(&resolved).enumerate() {
        let label = entry.label().to_string();
        let m = match r {
            Ok(m) => m,
            Err(e) => {
                report.errors += 1;
                methods.push(MethodSummary {
                    label,
                    params: None,
                    tuning: None,
                    runs: 0,
                    converged: 0,
                    stalled: 0,
                    budget_exhausted: 0,
                    errors: vec![RunError {
                        seed: cfg.seeds[0],
                        error: ErrorInfo::from(e),
                    }],
                    time_to_eps: None,
                    first_hit_time: None,
                    grad_sq_norm: None,
                });
                continue;
            }
        };
        let mine: Vec<&Outcome> = outcomes
            .iter()
            .filter(|(j, _)| *j == i)
            .map(|(_, o)| o)
            .collect();
        let mut errors = Vec::new();
        let mut ok: Vec<(&RunSummary, &Curve)> = Vec::new();
        for o in &mine {
            match &o.result {
                Ok((s, c)) => ok.push((s, c)),
                Err(e) => errors.push(RunError {
                    seed: o.seed,
                    error: ErrorInfo::from(e),
                }),
            }
        }
        report.errors += errors.len();
        let count = |f: fn(&RunStatus) -> bool| ok.iter().filter(|(s, _)| f(&s.status)).count();
        let to_eps: Vec<f64> = ok
            .iter()
            .map(|(s, _)| match s.status {
                RunStatus::Converged { time, .. } => time,
                _ => f64::INFINITY,
            })
            .collect();
        let first: Vec<f64> = ok
            .iter()
            .map(|(s, _)| s.first_hit.map_or(f64::INFINITY, |h| h.time))
            .collect();
        let band = (!ok.is_empty()).then(|| {
            let mut band = Band {
                mean: Vec::with_capacity(points),
                min: Vec::with_capacity(points),
                max: Vec::with_capacity(points),
            };
            for &t in &time_grid {
                let vals: Vec<f64> = ok.iter().map(|(_, c)| value_at(c, t)).collect();
                band.mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
                band.min
                    .push(vals.iter().copied().fold(f64::INFINITY, f64::min));
                band.max
                    .push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
            band
        });
        methods.push(MethodSummary {
            label,
            params: Some(m.method.describe()),
            tuning: m.tuning.clone(),
            runs: mine.len(),
            converged: count(|s| matches!(s, RunStatus::Converged { .. })),
            stalled: count(|s| matches!(s, RunStatus::Stalled { .. })),
            budget_exhausted: count(|s| matches!(s, RunStatus::BudgetExhausted)),
            errors,
            time_to_eps: Stats::of(&to_eps),
            first_hit_time: Stats::of(&first),
            grad_sq_norm: band,
        });
        if let Some(t) = &m.tuning {
            let prov = Provenance::new(&hash, cfg.tuning_seeds()[0]);
            write_atomic(
                &dir.join(format!("tune-{}.json", m.label)),
                &json_bytes(&serde_json::json!({"provenance": prov, "tuning": t}))?,
            )?;
        }
    }

    let summary = Summary {
        provenance: Provenance::new(&hash, cfg.seeds[0]),
        seeds: cfg.seeds.clone(),
        time_grid,
        methods,
    };
    write_atomic(&dir.join("summary.json"), &json_bytes(&summary)?)?;
    write_atomic(&dir.join("summary.csv"), summary_csv(&summary).as_bytes())?;
    Ok((report, summary))
}

/// Long-form band table: `method,time,mean,min,max`.
fn summary_csv(s: &Summary) -> String {
    use hetsgd_core::analysis::csv_value;
    let mut out = s.provenance.csv_comment();
    out.push_str("method,time,mean,min,max\n");
    for m in &s.methods {
        if let Some(b) = &m.grad_sq_norm {
            for (j, &t) in s.time_grid.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.label,
                    csv_value(t),
                    csv_value(b.mean[j]),
                    csv_value(b.min[j]),
                    csv_value(b.max[j])
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_interpolation_holds_last_value() {
        let c = vec![(0.0, 4.0), (1.0, 2.0), (3.0, 1.0)];
        assert_eq!(value_at(&c, 0.0), 4.0);
        assert_eq!(value_at(&c, 0.5), 4.0);
        assert_eq!(value_at(&c, 1.0), 2.0);
        assert_eq!(value_at(&c, 10.0), 1.0);
    }

    #[test]
    fn stats_with_infinite_runs() {
        let s = Stats::of(&[1.0, f64::INFINITY, 3.0]).unwrap();
        assert_eq!(s.median.value(), 3.0);
        assert_eq!(s.min.value(), 1.0);
        assert!(s.max.is_infinite());
        assert!(Stats::of(&[]).is_none());
    }
}
