use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::histogram::{Histogram, BIN_LIMIT, DEFAULT_MAX_BINS};
use super::AnalysisError;
use crate::engine::EventQueue;
use crate::planner::MindFlayerPlan;
use crate::rng::{purpose, stream, SimRng};
use crate::timemodel::{trial_duration, ClusterModel, ExtendedTime};

/// Fewest draws accepted by [`round_time_histogram`].
pub const MIN_DRAWS: usize = 1000;

/// Draws the duration of one round of a method started from idle workers.
pub trait RoundSampler: Sync {
    fn sample(&self, cluster: &ClusterModel, rng: &mut SimRng) -> ExtendedTime;
}

/// Rennala: every worker computes gradients back to back and the round ends
/// at the `batch`-th arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RennalaRound {
    pub batch: u64,
}

impl RoundSampler for RennalaRound {
    fn sample(&self, cluster: &ClusterModel, rng: &mut SimRng) -> ExtendedTime {
        let workers = cluster.workers();
        let mut queue = EventQueue::new();
        for (i, w) in workers.iter().enumerate() {
            queue.push(w.sample_compute_time(rng), i, 0);
        }
        let mut collected = 0;
        loop {
            let e = queue.pop().expect("one event per worker");
            if e.time.is_infinite() {
                return ExtendedTime::INFINITY;
            }
            collected += 1;
            if collected >= self.batch {
                return e.time;
            }
            queue.push(e.time + workers[e.worker].sample_compute_time(rng), e.worker, 0);
        }
    }
}

/// MindFlayer: worker `i` runs `trials[i]` clipped attempts and the round
/// lasts until the slowest worker is done.
#[derive(Debug, Clone, PartialEq)]
pub struct MindFlayerRound {
    pub t: Vec<f64>,
    pub trials: Vec<u64>,
}

impl MindFlayerRound {
    pub fn from_plan(plan: &MindFlayerPlan) -> Self {
        MindFlayerRound {
            t: plan.t.clone(),
            trials: plan.trials.clone(),
        }
    }
}

impl RoundSampler for MindFlayerRound {
    fn sample(&self, cluster: &ClusterModel, rng: &mut SimRng) -> ExtendedTime {
        let mut round = ExtendedTime::ZERO;
        for ((w, &t), &b) in cluster.workers().iter().zip(&self.t).zip(&self.trials) {
            let clip = ExtendedTime(t);
            let mut busy = ExtendedTime::ZERO;
            for _ in 0..b {
                busy = busy + trial_duration(w.tau, clip, w.delay.sample(rng)).0;
            }
            round = round.max(busy);
        }
        round
    }
}

/// `min_i tau_i + min_i eta_i` for one set of first draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstArrivalBound;

impl RoundSampler for FirstArrivalBound {
    fn sample(&self, cluster: &ClusterModel, rng: &mut SimRng) -> ExtendedTime {
        let ws = cluster.workers();
        let tau_min = ws.iter().map(|w| w.tau).fold(f64::INFINITY, f64::min);
        let eta_min = ws
            .iter()
            .map(|w| w.delay.sample(rng))
            .fold(ExtendedTime::INFINITY, ExtendedTime::min);
        ExtendedTime(tau_min) + eta_min
    }
}

/// How a one-round histogram is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSettings {
    pub draws: usize,
    /// Explicit bin width; `None` picks [`default_bin_width`].
    #[serde(default)]
    pub bin_width: Option<f64>,
    #[serde(default = "default_max_bins")]
    pub max_bins: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_bins() -> usize {
    DEFAULT_MAX_BINS
}

impl Default for HistogramSettings {
    fn default() -> Self {
        HistogramSettings {
            draws: 10_000,
            bin_width: None,
            max_bins: DEFAULT_MAX_BINS,
            seed: 0,
        }
    }
}

/// `draws` independent round durations. Draw `d` uses its own stream, so the
/// result does not depend on the thread count.
pub fn sample_round_times(
    cluster: &ClusterModel,
    sampler: &dyn RoundSampler,
    draws: usize,
    seed: u64,
) -> Vec<ExtendedTime> {
    (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = stream(seed, &[purpose::HISTOGRAM, d as u64]);
            sampler.sample(cluster, &mut rng)
        })
        .collect()
}

/// 95th percentile of the finite samples over 2000, widened so that the
/// finite range fits in half of [`BIN_LIMIT`].
pub fn default_bin_width(samples: &[ExtendedTime]) -> f64 {
    let mut finite: Vec<f64> = samples.iter().filter_map(|s| s.as_finite()).collect();
    if finite.is_empty() {
        return 1.0;
    }
    let idx = ((0.95 * finite.len() as f64).ceil() as usize).clamp(1, finite.len()) - 1;
    let (_, &mut p95, _) = finite.select_nth_unstable_by(idx, f64::total_cmp);
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w = (p95 / 2000.0).max((hi - lo) / (BIN_LIMIT as f64 / 2.0));
    if w > 0.0 && w.is_finite() {
        w
    } else {
        1.0
    }
}

/// Histogram of one-round durations; stalls land in the overflow mass.
pub fn round_time_histogram(
    cluster: &ClusterModel,
    sampler: &dyn RoundSampler,
    settings: &HistogramSettings,
) -> Result<Histogram, AnalysisError> {
    if settings.draws < MIN_DRAWS {
        return Err(AnalysisError::TooFewDraws(settings.draws));
    }
    let samples = sample_round_times(cluster, sampler, settings.draws, settings.seed);
    let w = settings.bin_width.unwrap_or_else(|| default_bin_width(&samples));
    Histogram::from_samples(&samples, w, settings.max_bins)
}
