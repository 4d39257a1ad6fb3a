//! Output files: provenance headers, atomic writes and trace formatting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use hetsgd_core::analysis::csv_value;
use hetsgd_core::engine::{RunRecord, TraceRow};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Embedded in every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new(config_sha256: &str, seed: u64) -> Self {
        Provenance {
            config_sha256: config_sha256.to_string(),
            seed,
            version: ARTIFACT_VERSION.to_string(),
        }
    }

    /// First line of every CSV file.
    pub fn csv_comment(&self) -> String {
        format!(
            "# hetsgd {} config_sha256={} seed={}\n",
            self.version, self.config_sha256, self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Write `bytes` to `path` via a temporary file and a rename, so readers
/// never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Rows kept in trace files: every `stride`-th plus the last.
pub fn thinned_rows(rows: &[TraceRow], stride: u64) -> Vec<TraceRow> {
    let mut out: Vec<TraceRow> = rows.iter().filter(|r| r.k % stride == 0).copied().collect();
    if let Some(last) = rows.last() {
        if out.last().map(|r| r.k) != Some(last.k) {
            out.push(*last);
        }
    }
    out
}

pub fn trace_csv(prov: &Provenance, rows: &[TraceRow]) -> Vec<u8> {
    let mut s = prov.csv_comment();
    s.push_str("k,time,grad_sq_norm,f_value,gradients_used,trials_attempted,discarded_stale\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.k,
            csv_value(r.time),
            csv_value(r.grad_sq_norm),
            csv_value(r.f_value),
            r.gradients_used,
            r.trials_attempted,
            r.discarded_stale
        ));
    }
    s.into_bytes()
}

#[derive(Serialize)]
struct TraceJson<'a> {
    provenance: &'a Provenance,
    rows: &'a [TraceRow],
}

pub fn trace_json(prov: &Provenance, rows: &[TraceRow]) -> Result<Vec<u8>> {
    json_bytes(&TraceJson {
        provenance: prov,
        rows,
    })
}

/// Per-run metadata written next to each trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSidecar {
    pub provenance: Provenance,
    pub label: String,
    pub method: serde_json::Value,
    pub record: RunSummary,
}

/// A run record without its rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub gamma: f64,
    pub status: hetsgd_core::engine::RunStatus,
    pub first_hit: Option<hetsgd_core::engine::Hit>,
    pub mean_hit: Option<hetsgd_core::engine::Hit>,
    pub final_time: f64,
    pub iterations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_staleness: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_staleness: Option<f64>,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        let (max_staleness, mean_staleness) = if r.staleness.is_empty() {
            (None, None)
        } else {
            let sum: u64 = r.staleness.iter().sum();
            (
                r.staleness.iter().copied().max(),
                Some(sum as f64 / r.staleness.len() as f64),
            )
        };
        RunSummary {
            seed: r.seed,
            gamma: r.gamma,
            status: r.status,
            first_hit: r.first_hit,
            mean_hit: r.mean_hit,
            final_time: r.final_time,
            iterations: r.iterations(),
            max_staleness,
            mean_staleness,
        }
    }
}

pub fn trace_path(dir: &Path, label: &str, seed: u64, format: Format) -> PathBuf {
    dir.join(format!("trace-{label}-seed{seed}.{}", format.extension()))
}

pub fn sidecar_path(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("run-{label}-seed{seed}.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: u64) -> TraceRow {
        TraceRow {
            k,
            time: k as f64,
            grad_sq_norm: 1.0,
            f_value: 0.5,
            gradients_used: 0,
            trials_attempted: 0,
            discarded_stale: 0,
        }
    }

    #[test]
    fn thinning_keeps_first_and_last() {
        let rows: Vec<TraceRow> = (0..=10).map(row).collect();
        let ks: Vec<u64> = thinned_rows(&rows, 4).iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![0, 4, 8, 10]);
        let ks: Vec<u64> = thinned_rows(&rows, 5).iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![0, 5, 10]);
    }

    #[test]
    fn csv_has_provenance_line() {
        let prov = Provenance::new("abc", 7);
        let text = String::from_utf8(trace_csv(&prov, &[row(0)])).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# hetsgd "));
        assert!(text.contains("config_sha256=abc seed=7"));
        assert_eq!(lines.nth(1).unwrap(), "0,0.0,1.0,0.5,0,0,0");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
