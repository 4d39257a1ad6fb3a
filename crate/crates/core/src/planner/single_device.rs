use serde::{Deserialize, Serialize};

use super::{rennala_iters, PlanError, ProblemConstants};
use crate::timemodel::{DelayDistribution, ExtendedTime};

/// Predicted wall-clock times of Rennala (`S = B`) and MindFlayer on one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleDeviceTimes {
    #[serde(rename = "K")]
    pub iterations: u64,
    pub p: f64,
    pub rennala: ExtendedTime,
    pub mindflayer: ExtendedTime,
}

impl SingleDeviceTimes {
    /// `T_Rennala / T_MindFlayer`, `+inf` when only MindFlayer finishes.
    pub fn ratio(&self) -> f64 {
        self.rennala.value() / self.mindflayer.value()
    }
}

/// `T_R = K B (tau + E[eta])` and `T_MF = (K/p) B (tau + t)` with `p = F(t)`.
pub fn single_device_times(
    tau: f64,
    delay: &DelayDistribution,
    t_clip: f64,
    constants: &ProblemConstants,
    batch: u64,
) -> Result<SingleDeviceTimes, PlanError> {
    if !(t_clip >= 0.0 && t_clip.is_finite()) {
        return Err(PlanError::InvalidClipTime {
            worker: 0,
            value: t_clip,
        });
    }
    let k = rennala_iters(
        constants.delta,
        constants.smoothness,
        constants.sigma_sq,
        constants.eps,
        batch,
    )?;
    let work = k as f64 * batch as f64;
    let rennala = match delay.mean().as_finite() {
        Some(mean) => ExtendedTime(work * (tau + mean)),
        None => ExtendedTime::INFINITY,
    };
    let p = delay.cdf(ExtendedTime(t_clip));
    let mindflayer = if p > 0.0 {
        ExtendedTime(work / p * (tau + t_clip))
    } else {
        ExtendedTime::INFINITY
    };
    Ok(SingleDeviceTimes {
        iterations: k,
        p,
        rennala,
        mindflayer,
    })
}

/// `(tau + Med + (E - Med)) / (2 (tau + Med))`: the advantage of clipping at
/// the median on one device.
pub fn prop2_ratio(tau: f64, delay: &DelayDistribution) -> Result<f64, PlanError> {
    let med = delay
        .median()
        .as_finite()
        .ok_or(PlanError::InfiniteMedian { worker: 0 })?;
    Ok((tau + med + delay.skewness_gap()) / (2.0 * (tau + med)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> ProblemConstants {
        ProblemConstants {
            delta: 1.0,
            smoothness: 1.0,
            sigma_sq: 0.0,
            eps: 0.1,
        }
    }

    #[test]
    fn lognormal_clip_at_one() {
        let d = DelayDistribution::lognormal(0.0, 2.0).unwrap();
        let times = single_device_times(1.0, &d, 1.0, &consts(), 1).unwrap();
        // Median clip: p = 1/2, so ratio = (tau + e^2) / (2 (tau + 1)).
        let expected = (1.0 + 2f64.exp()) / 4.0;
        assert!((times.ratio() - expected).abs() < 1e-12);
        assert!((prop2_ratio(1.0, &d).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn skewness_gap_closed_form() {
        for s in [0.5, 1.0, 2.0, 4.0] {
            let d = DelayDistribution::lognormal(0.0, s).unwrap();
            let r = prop2_ratio(0.0, &d).unwrap();
            assert!((r - (s * s / 2.0f64).exp() / 2.0).abs() < 1e-12 * r);
        }
    }

    #[test]
    fn heavy_tails_make_rennala_infinite() {
        let d = DelayDistribution::log_cauchy(0.0, 1.0).unwrap();
        let times = single_device_times(1.0, &d, 1.0, &consts(), 1).unwrap();
        assert!(times.rennala.is_infinite());
        assert!(times.mindflayer.is_finite());
        assert_eq!(times.ratio(), f64::INFINITY);
    }

    #[test]
    fn impossible_clip() {
        let d = DelayDistribution::lognormal(0.0, 1.0).unwrap();
        let times = single_device_times(1.0, &d, 0.0, &consts(), 1).unwrap();
        assert!(times.mindflayer.is_infinite());
    }
}
