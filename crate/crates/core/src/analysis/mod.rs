//! Distribution of total running time: one-round histograms, their K-fold
//! self-convolution, and comparison tables between methods.

use thiserror::Error;

use crate::planner::PlanError;
use crate::timemodel::TimeModelError;

mod compare;
mod histogram;
mod rounds;

pub use compare::{
    compare_methods, power_of_two_batches, ratio_curve_single_device, rennala_time_quantiles,
    CompareSettings, ComparisonRow, ComparisonTable, DelayFamily, RatioCurve, RatioRow,
    RennalaTimes,
};
pub use histogram::{ks_distance, Histogram, BIN_LIMIT, DEFAULT_MAX_BINS};
pub use rounds::{
    default_bin_width, round_time_histogram, sample_round_times, FirstArrivalBound,
    HistogramSettings, MindFlayerRound, RennalaRound, RoundSampler, MIN_DRAWS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("bin width must be positive and finite, got {0}")]
    InvalidBinWidth(f64),
    #[error("histogram would need {bins} bins (limit {BIN_LIMIT}); use a wider bin")]
    TooManyBins { bins: f64 },
    #[error("at least {MIN_DRAWS} draws are required, got {0}")]
    TooFewDraws(usize),
    #[error("no samples to bin")]
    NoSamples,
    #[error("convolution power must be at least 1")]
    InvalidPower,
    #[error("quantile level {0} is outside [0, 1]")]
    InvalidLevel(f64),
    #[error("bin widths {left} and {right} are not related by an integer factor")]
    IncompatibleWidths { left: f64, right: f64 },
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    TimeModel(#[from] TimeModelError),
}

/// CSV token for a number; `+inf` prints as `inf`.
pub fn csv_value(v: f64) -> String {
    format!("{v:?}")
}

/// CSV token for an optional number; missing values print as `na`.
pub fn csv_option(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), csv_value)
}
