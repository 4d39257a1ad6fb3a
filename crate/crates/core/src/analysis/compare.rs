use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::histogram::DEFAULT_MAX_BINS;
use super::rounds::{
    round_time_histogram, sample_round_times, FirstArrivalBound, HistogramSettings, RennalaRound,
    MIN_DRAWS,
};
use super::{csv_option, csv_value, AnalysisError};
use crate::planner::{
    choose_clip_times_median, choose_clip_times_optimize, default_quantile_grid, mindflayer_plan,
    optimize_single_device_clip, prop2_ratio, rennala_iters, single_device_times, ProblemConstants,
};
use crate::timemodel::{ClusterModel, DelayDistribution, ExtendedTime, TimeModelError};

/// One-parameter family of delay laws swept by the comparison tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DelayFamily {
    /// Parameter `s`.
    Lognormal {
        #[serde(default)]
        mu: f64,
    },
    /// Parameter `scale`.
    LogCauchy {
        #[serde(default)]
        location: f64,
    },
    /// Parameter `scale`.
    LogT { df: u32 },
    /// Parameter `q`.
    InfBernoulli,
}

impl DelayFamily {
    pub fn law(&self, param: f64) -> Result<DelayDistribution, TimeModelError> {
        match *self {
            DelayFamily::Lognormal { mu } => DelayDistribution::lognormal(mu, param),
            DelayFamily::LogCauchy { location } => DelayDistribution::log_cauchy(location, param),
            DelayFamily::LogT { df } => DelayDistribution::log_t(df, param),
            DelayFamily::InfBernoulli => DelayDistribution::inf_bernoulli(param),
        }
    }

    pub fn parameter_name(&self) -> &'static str {
        match self {
            DelayFamily::Lognormal { .. } => "s",
            DelayFamily::LogCauchy { .. } | DelayFamily::LogT { .. } => "scale",
            DelayFamily::InfBernoulli => "q",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSettings {
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_bins")]
    pub max_bins: usize,
    /// Quantile levels for the clip-time optimizer.
    #[serde(default = "default_quantile_grid")]
    pub quantile_grid: Vec<f64>,
    /// Rennala batch sizes to try; powers of two up to the batch target when
    /// absent.
    #[serde(default)]
    pub batch_grid: Option<Vec<u64>>,
}

fn default_max_bins() -> usize {
    DEFAULT_MAX_BINS
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings {
            draws: 10_000,
            seed: 0,
            max_bins: DEFAULT_MAX_BINS,
            quantile_grid: default_quantile_grid(),
            batch_grid: None,
        }
    }
}

/// `1, 2, 4, ...` up to the first power of two at or above `target`.
pub fn power_of_two_batches(target: f64) -> Vec<u64> {
    let mut out = vec![1u64];
    while (*out.last().unwrap() as f64) < target {
        out.push(out.last().unwrap() * 2);
    }
    out
}

/// Quantiles of Rennala's total time for one batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RennalaTimes {
    #[serde(rename = "S")]
    pub batch: u64,
    #[serde(rename = "K")]
    pub iterations: u64,
    pub q05: ExtendedTime,
    pub q50: ExtendedTime,
    pub q95: ExtendedTime,
}

/// Total-time quantiles of Rennala with batch `batch`: the one-round
/// histogram convolved `K` times with itself.
pub fn rennala_time_quantiles(
    cluster: &ClusterModel,
    constants: &ProblemConstants,
    batch: u64,
    settings: &HistogramSettings,
) -> Result<RennalaTimes, AnalysisError> {
    let k = rennala_iters(
        constants.delta,
        constants.smoothness,
        constants.sigma_sq,
        constants.eps,
        batch,
    )?;
    let round = round_time_histogram(cluster, &RennalaRound { batch }, settings)?;
    let finite = (1.0 - round.overflow_mass).powf(k as f64);
    let (q05, q50, q95) = if finite < 0.05 {
        // Even the 5% quantile is infinite; skip the convolution.
        let inf = ExtendedTime::INFINITY;
        (inf, inf, inf)
    } else {
        let total = round.self_convolve(k, settings.max_bins)?;
        (total.quantile(0.05)?, total.quantile(0.5)?, total.quantile(0.95)?)
    };
    Ok(RennalaTimes {
        batch,
        iterations: k,
        q05,
        q50,
        q95,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub param: f64,
    /// MindFlayer's predicted time with median clip times.
    pub mindflayer_median: Option<f64>,
    /// MindFlayer's predicted time with optimized clip times.
    pub mindflayer_optimized: Option<f64>,
    pub rennala: RennalaTimes,
    /// `K (tau_min + E[min_i eta_i])`, a lower bound on Rennala's mean time.
    pub rennala_lower_bound: ExtendedTime,
    pub ratio_median: Option<f64>,
    pub ratio_optimized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub parameter: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn write_csv(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(
            out,
            "{},mindflayer_median,mindflayer_optimized,rennala_S,rennala_K,rennala_q05,rennala_q50,rennala_q95,rennala_lower_bound,ratio_median,ratio_optimized",
            self.parameter
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                csv_value(r.param),
                csv_option(r.mindflayer_median),
                csv_option(r.mindflayer_optimized),
                r.rennala.batch,
                r.rennala.iterations,
                csv_value(r.rennala.q05.value()),
                csv_value(r.rennala.q50.value()),
                csv_value(r.rennala.q95.value()),
                csv_value(r.rennala_lower_bound.value()),
                csv_option(r.ratio_median),
                csv_option(r.ratio_optimized),
            )?;
        }
        Ok(())
    }
}

/// MindFlayer's predicted times against Rennala's convolved time
/// distribution, one row per family parameter.
///
/// Rennala's batch is tuned over `settings.batch_grid` by the median of its
/// total time. All grid points reuse `settings.seed`.
pub fn compare_methods(
    taus: &[f64],
    family: DelayFamily,
    grid: &[f64],
    constants: &ProblemConstants,
    settings: &CompareSettings,
) -> Result<ComparisonTable, AnalysisError> {
    if grid.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    if settings.draws < MIN_DRAWS {
        return Err(AnalysisError::TooFewDraws(settings.draws));
    }
    constants.validate()?;
    let s = constants.batch_target();
    let batches = settings
        .batch_grid
        .clone()
        .unwrap_or_else(|| power_of_two_batches(s));
    if batches.is_empty() || batches.contains(&0) {
        return Err(AnalysisError::EmptyGrid);
    }
    let hist = HistogramSettings {
        draws: settings.draws,
        bin_width: None,
        max_bins: settings.max_bins,
        seed: settings.seed,
    };
    let mut rows = Vec::with_capacity(grid.len());
    for &param in grid {
        let cluster = ClusterModel::shared_delay(taus, family.law(param)?)?;
        let mindflayer_median = choose_clip_times_median(&cluster)
            .and_then(|t| mindflayer_plan(&cluster, &t, constants))
            .ok()
            .map(|p| p.time_bound);
        let mindflayer_optimized = choose_clip_times_optimize(&cluster, s, &settings.quantile_grid)
            .and_then(|c| mindflayer_plan(&cluster, &c.t, constants))
            .ok()
            .map(|p| p.time_bound);
        let mut best: Option<RennalaTimes> = None;
        for &b in &batches {
            let r = rennala_time_quantiles(&cluster, constants, b, &hist)?;
            if best.is_none_or(|cur| (r.q50, r.q05) < (cur.q50, cur.q05)) {
                best = Some(r);
            }
        }
        let rennala = best.expect("nonempty batch grid");
        let first = sample_round_times(&cluster, &FirstArrivalBound, settings.draws, settings.seed);
        let mean_first = if first.iter().any(|t| t.is_infinite()) {
            ExtendedTime::INFINITY
        } else {
            ExtendedTime(first.iter().map(|t| t.value()).sum::<f64>() / first.len() as f64)
        };
        let rennala_lower_bound = ExtendedTime(rennala.iterations as f64 * mean_first.value());
        let ratio = |mf: Option<f64>| mf.map(|m| rennala.q50.value() / m);
        rows.push(ComparisonRow {
            param,
            ratio_median: ratio(mindflayer_median),
            ratio_optimized: ratio(mindflayer_optimized),
            mindflayer_median,
            mindflayer_optimized,
            rennala,
            rennala_lower_bound,
        });
    }
    Ok(ComparisonTable {
        parameter: family.parameter_name().to_string(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub param: f64,
    pub skewness_gap: f64,
    /// Closed-form ratio at the median clip time.
    pub prop2_ratio: Option<f64>,
    pub median_clip: Option<f64>,
    /// `T_Rennala / T_MindFlayer` at the median clip time.
    pub median_ratio: Option<f64>,
    pub optimized_clip: Option<f64>,
    /// `T_Rennala / T_MindFlayer` at the optimized clip time.
    pub optimized_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCurve {
    pub parameter: String,
    pub tau: f64,
    pub rows: Vec<RatioRow>,
}

impl RatioCurve {
    pub fn write_csv(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(
            out,
            "{},skewness_gap,prop2_ratio,median_clip,median_ratio,optimized_clip,optimized_ratio",
            self.parameter
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_value(r.param),
                csv_value(r.skewness_gap),
                csv_option(r.prop2_ratio),
                csv_option(r.median_clip),
                csv_option(r.median_ratio),
                csv_option(r.optimized_clip),
                csv_option(r.optimized_ratio),
            )?;
        }
        Ok(())
    }
}

/// Single-device time ratio of Rennala (`S = B`) to MindFlayer at the median
/// and the optimized clip time, one row per family parameter.
pub fn ratio_curve_single_device(
    tau: f64,
    family: DelayFamily,
    grid: &[f64],
    constants: &ProblemConstants,
    batch: u64,
    quantile_grid: &[f64],
) -> Result<RatioCurve, AnalysisError> {
    if grid.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &param in grid {
        let law = family.law(param)?;
        let median_clip = law.median().as_finite();
        let median_ratio = match median_clip {
            Some(t) => Some(single_device_times(tau, &law, t, constants, batch)?.ratio()),
            None => None,
        };
        let (optimized_clip, optimized_ratio) = match optimize_single_device_clip(tau, &law, quantile_grid) {
            Ok((t, _)) => (
                Some(t),
                Some(single_device_times(tau, &law, t, constants, batch)?.ratio()),
            ),
            Err(_) => (None, None),
        };
        rows.push(RatioRow {
            param,
            skewness_gap: law.skewness_gap(),
            prop2_ratio: prop2_ratio(tau, &law).ok(),
            median_clip,
            median_ratio,
            optimized_clip,
            optimized_ratio,
        });
    }
    Ok(RatioCurve {
        parameter: family.parameter_name().to_string(),
        tau,
        rows,
    })
}
