use std::path::Path;

use anyhow::{anyhow, Result};
use serde::Serialize;

use hetsgd_core::analysis::{
    csv_value, round_time_histogram, Histogram, HistogramSettings, MindFlayerRound, RennalaRound,
    RoundSampler,
};
use hetsgd_core::engine::ClipSpec;
use hetsgd_core::planner::{mindflayer_plan, rennala_iters};

use super::{context, Report};
use crate::config::{ExperimentConfig, RoundMethod, Setup};
use crate::output::{json_bytes, write_atomic, Format, Provenance};

#[derive(Serialize)]
struct HistogramFile<'a> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    histogram: &'a Histogram,
}

/// What the histogram command printed and wrote.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramReport {
    pub method: RoundMethod,
    #[serde(rename = "S", skip_serializing_if = "Option::is_none")]
    pub batch: Option<u64>,
    #[serde(rename = "K")]
    pub iterations: u64,
    pub bin_width: f64,
    pub round_overflow: f64,
    pub total_overflow: f64,
    pub quantiles: Vec<QuantileRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileRow {
    pub level: f64,
    pub round: hetsgd_core::ExtendedTime,
    pub total: hetsgd_core::ExtendedTime,
}

/// One-round time histogram, its `K`-fold self-convolution and quantiles.
pub fn histogram(
    cfg: &ExperimentConfig,
    dir: &Path,
    format: Format,
) -> Result<(Report, HistogramReport)> {
    let spec = cfg
        .histogram
        .as_ref()
        .ok_or_else(|| anyhow!("config has no \"histogram\" section"))?;
    let setup = Setup::new(cfg)?;
    let c = setup.constants;
    let (sampler, batch, planned_k): (Box<dyn RoundSampler>, Option<u64>, u64) = match spec.method {
        RoundMethod::Rennala => {
            let s = spec.batch.unwrap_or_else(|| c.batch_target().ceil() as u64);
            let k = rennala_iters(c.delta, c.smoothness, c.sigma_sq, c.eps, s)?;
            (Box::new(RennalaRound { batch: s }), Some(s), k)
        }
        RoundMethod::Mindflayer => {
            let clip = spec.clip.clone().unwrap_or_default();
            let t = ClipSpec::resolve(&clip, &context(&setup))?;
            let plan = mindflayer_plan(&setup.cluster, &t, &c)?;
            let k = plan.iterations;
            (Box::new(MindFlayerRound::from_plan(&plan)), None, k)
        }
    };
    let k = spec.iterations.unwrap_or(planned_k);
    let settings = HistogramSettings {
        draws: spec.draws,
        bin_width: spec.bin_width,
        max_bins: spec.max_bins,
        seed: cfg.seeds[0],
    };
    let round = round_time_histogram(&setup.cluster, sampler.as_ref(), &settings)?;
    let total = round.self_convolve(k, spec.max_bins)?;
    let quantiles = spec
        .quantiles
        .iter()
        .map(|&p| {
            Ok(QuantileRow {
                level: p,
                round: round.quantile(p)?,
                total: total.quantile(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let prov = Provenance::new(&cfg.hash(), cfg.seeds[0]);
    write_atomic(
        &dir.join("round-histogram.json"),
        &json_bytes(&HistogramFile {
            provenance: &prov,
            histogram: &round,
        })?,
    )?;
    write_atomic(
        &dir.join("total-histogram.json"),
        &json_bytes(&HistogramFile {
            provenance: &prov,
            histogram: &total,
        })?,
    )?;
    let report = HistogramReport {
        method: spec.method,
        batch,
        iterations: k,
        bin_width: round.bin_width,
        round_overflow: round.overflow_mass,
        total_overflow: total.overflow_mass,
        quantiles,
    };
    match format {
        Format::Csv => {
            let mut s = prov.csv_comment();
            s.push_str("level,round,total\n");
            for q in &report.quantiles {
                s.push_str(&format!(
                    "{},{},{}\n",
                    csv_value(q.level),
                    csv_value(q.round.value()),
                    csv_value(q.total.value())
                ));
            }
            write_atomic(&dir.join("quantiles.csv"), s.as_bytes())?;
        }
        Format::Json => write_atomic(
            &dir.join("quantiles.json"),
            &json_bytes(&serde_json::json!({"provenance": prov, "quantiles": report.quantiles}))?,
        )?,
    }
    Ok((Report::default(), report))
}
