use anyhow::Result;
use serde::Serialize;
use serde_json::{json, Value};

use hetsgd_core::planner::{rennala_iters, ProblemConstants};

use super::{build, ErrorInfo, Report};
use crate::config::{ExperimentConfig, Setup};
use crate::output::Provenance;

#[derive(Serialize)]
struct PlanEntry {
    label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<ErrorInfo>,
}

#[derive(Serialize)]
struct PlanOutput {
    provenance: Provenance,
    constants: ProblemConstants,
    methods: Vec<PlanEntry>,
}

/// Theoretical parameters of every configured method, as JSON.
pub fn plan(cfg: &ExperimentConfig, out: &mut dyn std::io::Write) -> Result<Report> {
    let setup = Setup::new(cfg)?;
    let c = setup.constants;
    let mut report = Report::default();
    let methods = cfg
        .methods
        .iter()
        .map(|entry| {
            let label = entry.label().to_string();
            match build(entry, &setup) {
                Ok(built) => {
                    let mut plan = built.method.describe();
                    // Rennala and Minibatch run the plain SGD bound with batch S or n.
                    let batch = match entry.name.as_str() {
                        "rennala" => plan["S"].as_u64(),
                        "minibatch" => Some(setup.cluster.len() as u64),
                        _ => None,
                    };
                    if let Some(b) = batch {
                        if let Ok(k) = rennala_iters(c.delta, c.smoothness, c.sigma_sq, c.eps, b) {
                            plan["K"] = json!(k);
                        }
                    }
                    if built.tuning.gamma || built.tuning.batch {
                        plan["needs_tuning"] = json!(built.tuning);
                    }
                    PlanEntry {
                        label,
                        plan: Some(plan),
                        error: None,
                    }
                }
                Err(e) => {
                    report.errors += 1;
                    PlanEntry {
                        label,
                        plan: None,
                        error: Some(ErrorInfo::from(&e)),
                    }
                }
            }
        })
        .collect();
    let output = PlanOutput {
        provenance: Provenance::new(&cfg.hash(), cfg.seeds[0]),
        constants: c,
        methods,
    };
    serde_json::to_writer_pretty(&mut *out, &output)?;
    writeln!(out)?;
    Ok(report)
}
