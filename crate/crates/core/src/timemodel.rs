//! Random compute-time model: worker `i` needs `tau_i + eta_i` seconds per
//! stochastic gradient, with `eta_i` drawn from a delay law that may put mass
//! at `+inf` or have an infinite mean.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeModelError {
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("probability must lie in (0, 1), got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("a cluster needs at least one worker")]
    EmptyCluster,
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> TimeModelError {
    TimeModelError::InvalidParameter {
        name,
        value,
        reason,
    }
}

/// Nonnegative seconds, or `+inf`.
///
/// Backed by an IEEE double where `+inf` is the infinite value, so addition
/// and `min` follow extended-real arithmetic. NaN and negative values cannot
/// be constructed, which makes the ordering total.
#[derive(Clone, Copy, PartialEq)]
pub struct ExtendedTime(pub(crate) f64);

impl ExtendedTime {
    pub const ZERO: ExtendedTime = ExtendedTime(0.0);
    pub const INFINITY: ExtendedTime = ExtendedTime(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self, TimeModelError> {
        if value.is_nan() || value < 0.0 {
            Err(TimeModelError::NegativeTime(value))
        } else {
            Ok(ExtendedTime(value))
        }
    }

    /// Finite, nonnegative seconds.
    pub fn finite(value: f64) -> Result<Self, TimeModelError> {
        if value.is_finite() {
            Self::new(value)
        } else {
            Err(invalid("time", value, "must be finite"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn is_finite(self) -> bool {
        !self.is_infinite()
    }

    pub fn as_finite(self) -> Option<f64> {
        self.is_finite().then_some(self.0)
    }

    pub fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Eq for ExtendedTime {}

impl Ord for ExtendedTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.partial_cmp(&other.0).expect("ExtendedTime is never NaN")
    }
}

impl PartialOrd for ExtendedTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add for ExtendedTime {
    type Output = ExtendedTime;
    fn add(self, rhs: Self) -> Self {
        ExtendedTime(self.0 + rhs.0)
    }
}

impl fmt::Debug for ExtendedTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for ExtendedTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for ExtendedTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => ExtendedTime::new(v).map_err(serde::de::Error::custom),
            Raw::Text(s) if s == "inf" => Ok(ExtendedTime::INFINITY),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Law of the extra compute time `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "DelaySpec")]
pub enum DelayDistribution {
    /// `exp(mu + s Z)`, `Z` standard normal.
    Lognormal { mu: f64, s: f64 },
    /// `exp(location + scale C)`, `C` standard Cauchy.
    LogCauchy { location: f64, scale: f64 },
    /// `exp(scale T)`, `T` Student-t with `df` degrees of freedom.
    LogT { df: u32, scale: f64 },
    /// 0 with probability `1 - q`, `+inf` with probability `q`.
    InfBernoulli { q: f64 },
    /// Always `c`.
    Constant { c: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum DelaySpec {
    Lognormal {
        mu: f64,
        s: f64,
    },
    LogCauchy {
        #[serde(default)]
        location: f64,
        scale: f64,
    },
    LogT {
        df: u32,
        scale: f64,
    },
    InfBernoulli {
        q: f64,
    },
    Constant {
        c: f64,
    },
}

impl TryFrom<DelaySpec> for DelayDistribution {
    type Error = TimeModelError;
    fn try_from(spec: DelaySpec) -> Result<Self, Self::Error> {
        match spec {
            DelaySpec::Lognormal { mu, s } => Self::lognormal(mu, s),
            DelaySpec::LogCauchy { location, scale } => Self::log_cauchy(location, scale),
            DelaySpec::LogT { df, scale } => Self::log_t(df, scale),
            DelaySpec::InfBernoulli { q } => Self::inf_bernoulli(q),
            DelaySpec::Constant { c } => Self::constant(c),
        }
    }
}

impl DelayDistribution {
    pub fn lognormal(mu: f64, s: f64) -> Result<Self, TimeModelError> {
        if !mu.is_finite() {
            return Err(invalid("mu", mu, "must be finite"));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid("s", s, "must be positive"));
        }
        Ok(Self::Lognormal { mu, s })
    }

    pub fn log_cauchy(location: f64, scale: f64) -> Result<Self, TimeModelError> {
        if !location.is_finite() {
            return Err(invalid("location", location, "must be finite"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale", scale, "must be positive"));
        }
        Ok(Self::LogCauchy { location, scale })
    }

    pub fn log_t(df: u32, scale: f64) -> Result<Self, TimeModelError> {
        if df == 0 {
            return Err(invalid("df", 0.0, "must be a positive integer"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale", scale, "must be positive"));
        }
        Ok(Self::LogT { df, scale })
    }

    pub fn inf_bernoulli(q: f64) -> Result<Self, TimeModelError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(invalid("q", q, "must lie in (0, 1)"));
        }
        Ok(Self::InfBernoulli { q })
    }

    pub fn constant(c: f64) -> Result<Self, TimeModelError> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(invalid("c", c, "must be finite and nonnegative"));
        }
        Ok(Self::Constant { c })
    }

    /// Draw one `eta`.
    pub fn sample(&self, rng: &mut SimRng) -> ExtendedTime {
        let v = match *self {
            Self::Lognormal { mu, s } => {
                let z: f64 = rng.sample(StandardNormal);
                (mu + s * z).exp()
            }
            Self::LogCauchy { location, scale } => {
                let c = Cauchy::new(0.0, 1.0).expect("standard Cauchy").sample(rng);
                (location + scale * c).exp()
            }
            Self::LogT { df, scale } => {
                let t = StudentT::new(df as f64).expect("df > 0").sample(rng);
                (scale * t).exp()
            }
            Self::InfBernoulli { q } => {
                if rng.random::<f64>() < q {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            Self::Constant { c } => c,
        };
        ExtendedTime(v)
    }

    /// `P(eta <= t)`. At `t = inf` this is the finite mass `P(eta < inf)`.
    pub fn cdf(&self, t: ExtendedTime) -> f64 {
        if t.is_infinite() {
            return self.finite_mass();
        }
        let t = t.value();
        match *self {
            Self::Lognormal { mu, s } => {
                if t == 0.0 {
                    0.0
                } else {
                    std_normal().cdf((t.ln() - mu) / s)
                }
            }
            Self::LogCauchy { location, scale } => {
                if t == 0.0 {
                    0.0
                } else {
                    0.5 + ((t.ln() - location) / scale).atan() / std::f64::consts::PI
                }
            }
            Self::LogT { df, scale } => {
                if t == 0.0 {
                    0.0
                } else {
                    students_t(df).cdf(t.ln() / scale)
                }
            }
            Self::InfBernoulli { q } => 1.0 - q,
            Self::Constant { c } => {
                if t >= c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `cdf` for a raw number; rejects negative input.
    pub fn cdf_at(&self, t: f64) -> Result<f64, TimeModelError> {
        Ok(self.cdf(ExtendedTime::new(t)?))
    }

    /// Generalized inverse: smallest `t` with `cdf(t) >= p`.
    pub fn quantile(&self, p: f64) -> Result<ExtendedTime, TimeModelError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(TimeModelError::ProbabilityOutOfRange(p));
        }
        let v = match *self {
            Self::Lognormal { mu, s } => (mu + s * std_normal().inverse_cdf(p)).exp(),
            Self::LogCauchy { location, scale } => {
                (location + scale * (std::f64::consts::PI * (p - 0.5)).tan()).exp()
            }
            Self::LogT { df, scale } => (scale * students_t(df).inverse_cdf(p)).exp(),
            Self::InfBernoulli { q } => {
                if p <= 1.0 - q {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Constant { c } => c,
        };
        Ok(ExtendedTime(v))
    }

    pub fn median(&self) -> ExtendedTime {
        self.quantile(0.5).expect("0.5 is a valid level")
    }

    /// `E[eta]`; `+inf` when the mean diverges (or overflows a double).
    pub fn mean(&self) -> ExtendedTime {
        match *self {
            Self::Lognormal { mu, s } => ExtendedTime((mu + 0.5 * s * s).exp()),
            Self::LogCauchy { .. } | Self::LogT { .. } | Self::InfBernoulli { .. } => {
                ExtendedTime::INFINITY
            }
            Self::Constant { c } => ExtendedTime(c),
        }
    }

    /// `E[eta] - Med[eta]`.
    pub fn skewness_gap(&self) -> f64 {
        let mean = self.mean();
        if mean.is_infinite() {
            return f64::INFINITY;
        }
        mean.value() - self.median().value()
    }

    /// `P(eta < inf)`.
    pub fn finite_mass(&self) -> f64 {
        match *self {
            Self::InfBernoulli { q } => 1.0 - q,
            _ => 1.0,
        }
    }

    /// Finite jump points of a purely discrete law; `None` for continuous laws.
    pub fn jump_points(&self) -> Option<Vec<f64>> {
        match *self {
            Self::InfBernoulli { .. } => Some(vec![0.0]),
            Self::Constant { c } => Some(vec![c]),
            _ => None,
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn students_t(df: u32) -> StudentsT {
    StudentsT::new(0.0, 1.0, df as f64).expect("df > 0")
}

/// Outcome of a single clipped gradient attempt.
pub fn trial_duration(tau: f64, t_clip: ExtendedTime, eta: ExtendedTime) -> (ExtendedTime, bool) {
    let success = eta.is_finite() && eta <= t_clip;
    (ExtendedTime(tau) + eta.min(t_clip), success)
}

/// Minimum compute time `tau` and delay law of one worker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub tau: f64,
    pub delay: DelayDistribution,
}

impl WorkerProfile {
    pub fn new(tau: f64, delay: DelayDistribution) -> Result<Self, TimeModelError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid("tau", tau, "must be positive and finite"));
        }
        Ok(WorkerProfile { tau, delay })
    }

    /// One unclipped compute time `tau + eta`.
    pub fn sample_compute_time(&self, rng: &mut SimRng) -> ExtendedTime {
        ExtendedTime(self.tau) + self.delay.sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    workers: Vec<WorkerProfile>,
}

impl ClusterModel {
    pub fn new(workers: Vec<WorkerProfile>) -> Result<Self, TimeModelError> {
        if workers.is_empty() {
            return Err(TimeModelError::EmptyCluster);
        }
        Ok(ClusterModel { workers })
    }

    /// Every worker shares `delay`; `taus` gives the minimum times in order.
    pub fn shared_delay(taus: &[f64], delay: DelayDistribution) -> Result<Self, TimeModelError> {
        let workers = taus
            .iter()
            .map(|&tau| WorkerProfile::new(tau, delay))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(workers)
    }

    pub fn workers(&self) -> &[WorkerProfile] {
        &self.workers
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.workers.iter().map(|w| w.tau).collect()
    }
}

/// `tau_i = sqrt(i + 1)` for `i = 1..=n`.
pub fn sqrt_rule_taus(n: usize) -> Vec<f64> {
    (1..=n).map(|i| ((i + 1) as f64).sqrt()).collect()
}
