use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

use hetsgd_core::analysis::{
    compare_methods, csv_value, ratio_curve_single_device, CompareSettings, ComparisonTable,
    RatioCurve,
};

use super::{simulate, Report};
use crate::config::{ExperimentConfig, Setup, SweepMode, SweepSpec};
use crate::output::{json_bytes, write_atomic, Format, Provenance};

/// Text form of a sweep value for the first CSV column.
fn axis_token(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), csv_value),
        other => other.to_string(),
    }
}

fn prepend(
    axis_value: &str,
    csv: &[u8],
    header: &mut Option<String>,
    axis: &str,
    body: &mut String,
) {
    let text = String::from_utf8_lossy(csv);
    let mut lines = text.lines();
    if let Some(h) = lines.next() {
        header.get_or_insert_with(|| format!("{axis},{h}\n"));
    }
    for line in lines {
        body.push_str(axis_value);
        body.push(',');
        body.push_str(line);
        body.push('\n');
    }
}

fn compare_settings(cfg: &ExperimentConfig) -> CompareSettings {
    let spec = cfg.compare.clone().unwrap_or_default();
    let mut s = CompareSettings {
        draws: spec.draws,
        seed: cfg.seeds[0],
        max_bins: spec.max_bins,
        batch_grid: spec.batch_grid,
        ..CompareSettings::default()
    };
    if let Some(q) = spec.quantile_grid {
        s.quantile_grid = q;
    }
    s
}

/// Evaluate the configured experiment at each value of one config field.
///
/// `simulate` writes a full run directory per point plus `sweep.csv`;
/// `compare` and `ratio` write `compare.csv` and `ratio.csv`. A point that
/// fails is reported on stderr, counted as an error and left out of the
/// table; the other points still run.
pub fn sweep(
    cfg: &ExperimentConfig,
    spec: &SweepSpec,
    dir: &Path,
    format: Format,
) -> Result<Report> {
    if spec.values.is_empty() {
        bail!("sweep over {} has no values", spec.axis);
    }
    let prov = Provenance::new(&cfg.hash(), cfg.seeds[0]);
    let mut report = Report::default();
    let mut header: Option<String> = None;
    let mut body = String::new();
    let mut json_points = Vec::new();
    for (i, value) in spec.values.iter().enumerate() {
        let token = axis_token(value);
        let outcome = (|| -> Result<()> {
            let point = cfg
                .with_path(&spec.axis, value.clone())
                .with_context(|| format!("setting {} = {value}", spec.axis))?;
            match spec.mode {
                SweepMode::Simulate => {
                    let sub = dir.join(format!("point-{i}"));
                    std::fs::create_dir_all(&sub)?;
                    let (r, summary) = simulate(&point, &sub, format)?;
                    report.errors += r.errors;
                    if header.is_none() {
                        let mut h = spec.axis.clone();
                        for m in &summary.methods {
                            let l = &m.label;
                            h.push_str(&format!(
                                ",{l}_median_time,{l}_min_time,{l}_max_time,{l}_converged"
                            ));
                        }
                        header = Some(h + "\n");
                    }
                    body.push_str(&token);
                    for m in &summary.methods {
                        match &m.time_to_eps {
                            Some(s) => body.push_str(&format!(
                                ",{},{},{}",
                                csv_value(s.median.value()),
                                csv_value(s.min.value()),
                                csv_value(s.max.value())
                            )),
                            None => body.push_str(",na,na,na"),
                        }
                        body.push_str(&format!(",{}", m.converged));
                    }
                    body.push('\n');
                    json_points.push(serde_json::json!({"value": value, "summary": summary}));
                }
                SweepMode::Compare => {
                    let setup = Setup::new(&point)?;
                    let taus = point.cluster.taus()?;
                    let (family, param) = point.cluster.family()?;
                    let table: ComparisonTable = compare_methods(
                        &taus,
                        family,
                        &[param],
                        &setup.constants,
                        &compare_settings(&point),
                    )?;
                    let mut csv = Vec::new();
                    table.write_csv(&mut csv)?;
                    prepend(&token, &csv, &mut header, &spec.axis, &mut body);
                    json_points.push(serde_json::json!({"value": value, "table": table}));
                }
                SweepMode::Ratio => {
                    let setup = Setup::new(&point)?;
                    let taus = point.cluster.taus()?;
                    let (family, param) = point.cluster.family()?;
                    let settings = compare_settings(&point);
                    let batch = point.compare.as_ref().map_or(1, |c| c.batch);
                    let curve: RatioCurve = ratio_curve_single_device(
                        taus[0],
                        family,
                        &[param],
                        &setup.constants,
                        batch,
                        &settings.quantile_grid,
                    )?;
                    let mut csv = Vec::new();
                    curve.write_csv(&mut csv)?;
                    prepend(&token, &csv, &mut header, &spec.axis, &mut body);
                    json_points.push(serde_json::json!({"value": value, "curve": curve}));
                }
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            eprintln!("hetsgd: {} = {token}: {e:#}", spec.axis);
            report.errors += 1;
            json_points.push(serde_json::json!({"value": value, "error": format!("{e:#}")}));
        }
    }
    let name = match spec.mode {
        SweepMode::Simulate => "sweep",
        SweepMode::Compare => "compare",
        SweepMode::Ratio => "ratio",
    };
    match format {
        Format::Csv => {
            let mut out = prov.csv_comment();
            out.push_str(&header.unwrap_or_default());
            out.push_str(&body);
            write_atomic(&dir.join(format!("{name}.csv")), out.as_bytes())?;
        }
        Format::Json => write_atomic(
            &dir.join(format!("{name}.json")),
            &json_bytes(&serde_json::json!({
                "provenance": prov,
                "axis": spec.axis,
                "mode": spec.mode,
                "points": json_points,
            }))?,
        )?,
    }
    Ok(report)
}
