use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use hetsgd_core::analysis::csv_value;
use hetsgd_core::engine::TuneResult;

use super::{build, run_tuning, ErrorInfo, Report};
use crate::config::{ExperimentConfig, Setup};
use crate::output::{json_bytes, write_atomic, Format, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneEntry {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<TuneResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

fn tune_csv(prov: &Provenance, r: &TuneResult) -> String {
    let mut s = prov.csv_comment();
    s.push_str("gamma,S,score,converged_runs,runs\n");
    for row in &r.table {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_value(row.gamma),
            row.batch
                .map_or_else(|| "na".to_string(), |b| b.to_string()),
            csv_value(row.score),
            row.converged_runs,
            row.runs
        ));
    }
    s
}

/// Grid-search the stepsize of every configured method whatever its
/// configured `gamma`, and Rennala's `S` when it is set to `"tune"`.
pub fn tune(
    cfg: &ExperimentConfig,
    dir: &Path,
    format: Format,
) -> Result<(Report, Vec<TuneEntry>)> {
    let setup = Setup::new(cfg)?;
    let prov = Provenance::new(&cfg.hash(), cfg.tuning_seeds()[0]);
    let mut report = Report::default();
    let mut entries = Vec::new();
    for entry in &cfg.methods {
        let label = entry.label().to_string();
        // Every stepsize is searched here, so the configured one is ignored.
        let mut entry = entry.clone();
        entry.params.insert("gamma".into(), "tune".into());
        let outcome = build(&entry, &setup).and_then(|built| {
            run_tuning(built.method.as_ref(), true, built.tuning.batch, cfg, &setup)
        });
        match outcome {
            Ok(result) => {
                let path = dir.join(format!("tune-{label}.{}", format.extension()));
                match format {
                    Format::Csv => write_atomic(&path, tune_csv(&prov, &result).as_bytes())?,
                    Format::Json => write_atomic(
                        &path,
                        &json_bytes(&serde_json::json!({"provenance": prov, "tuning": result}))?,
                    )?,
                }
                entries.push(TuneEntry {
                    label,
                    result: Some(result),
                    error: None,
                });
            }
            Err(e) => {
                report.errors += 1;
                entries.push(TuneEntry {
                    label,
                    result: None,
                    error: Some(ErrorInfo::from(&e)),
                });
            }
        }
    }
    Ok((report, entries))
}
