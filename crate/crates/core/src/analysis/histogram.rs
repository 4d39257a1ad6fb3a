use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::timemodel::ExtendedTime;

/// Largest bin count a histogram may be built with.
pub const BIN_LIMIT: usize = 100_000_000;
/// Histograms longer than this are coarsened by a power-of-two factor.
pub const DEFAULT_MAX_BINS: usize = 2_000_000;

/// Supports at or below this product are convolved directly.
const DIRECT_WORK: usize = 1 << 16;

/// Binned distribution on `[0, inf]`.
///
/// Bin `j` is centred at `origin + j * bin_width`; `overflow_mass` holds the
/// probability of `+inf` and of anything beyond the binned range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub origin: f64,
    pub mass: Vec<f64>,
    pub overflow_mass: f64,
}

impl Histogram {
    /// Point mass at `at`.
    pub fn point(at: f64, bin_width: f64) -> Result<Self, AnalysisError> {
        check_width(bin_width)?;
        Ok(Histogram {
            bin_width,
            origin: at,
            mass: vec![1.0],
            overflow_mass: 0.0,
        })
    }

    /// Empirical histogram of `samples`; infinite samples go to the overflow.
    ///
    /// Bins start at the smallest finite sample. When more than `max_bins`
    /// bins would be needed, the width is multiplied by the smallest power of
    /// two that fits.
    pub fn from_samples(
        samples: &[ExtendedTime],
        bin_width: f64,
        max_bins: usize,
    ) -> Result<Self, AnalysisError> {
        check_width(bin_width)?;
        if samples.is_empty() {
            return Err(AnalysisError::NoSamples);
        }
        let n = samples.len() as f64;
        let finite: Vec<f64> = samples.iter().filter_map(|s| s.as_finite()).collect();
        let overflow_mass = (samples.len() - finite.len()) as f64 / n;
        if finite.is_empty() {
            return Ok(Histogram {
                bin_width,
                origin: 0.0,
                mass: Vec::new(),
                overflow_mass,
            });
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let fine_bins = ((hi - lo) / bin_width + 0.5).floor() + 1.0;
        if fine_bins.is_nan() || fine_bins > BIN_LIMIT as f64 {
            return Err(AnalysisError::TooManyBins { bins: fine_bins });
        }
        let fine_bins = fine_bins as usize;
        let factor = coarsening_factor(fine_bins, max_bins);
        let mut counts = vec![0u64; fine_bins.div_ceil(factor)];
        for &x in &finite {
            let j = ((x - lo) / bin_width + 0.5).floor() as usize;
            counts[j.min(fine_bins - 1) / factor] += 1;
        }
        Ok(Histogram {
            bin_width: bin_width * factor as f64,
            origin: lo + (factor - 1) as f64 * bin_width / 2.0,
            mass: counts.iter().map(|&c| c as f64 / n).collect(),
            overflow_mass,
        })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn center(&self, j: usize) -> f64 {
        self.origin + j as f64 * self.bin_width
    }

    /// Total finite mass.
    pub fn finite_mass(&self) -> f64 {
        compensated_sum(&self.mass)
    }

    /// `sum(mass) + overflow_mass`, 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.finite_mass() + self.overflow_mass
    }

    /// Mean of the bin centres; `+inf` when there is overflow mass.
    pub fn mean(&self) -> ExtendedTime {
        if self.overflow_mass > 0.0 || self.mass.is_empty() {
            return ExtendedTime::INFINITY;
        }
        let total = self.finite_mass();
        let m: f64 = self
            .mass
            .iter()
            .enumerate()
            .map(|(j, &w)| w * self.center(j))
            .sum();
        ExtendedTime(m / total)
    }

    /// CDF with mass spread uniformly over each bin.
    pub fn cdf(&self, x: f64) -> f64 {
        let w = self.bin_width;
        let start = self.origin - w / 2.0;
        if x < start {
            return 0.0;
        }
        let pos = (x - start) / w;
        let j = pos.floor();
        if j >= self.mass.len() as f64 {
            return self.finite_mass();
        }
        let j = j as usize;
        let below: f64 = self.mass[..j].iter().sum();
        below + self.mass[j] * (pos - j as f64)
    }

    /// Generalized inverse of [`Histogram::cdf`], linear within bins.
    /// Levels beyond the finite mass map to `+inf`.
    pub fn quantile(&self, p: f64) -> Result<ExtendedTime, AnalysisError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(AnalysisError::InvalidLevel(p));
        }
        let w = self.bin_width;
        let mut cum = 0.0;
        for (j, &m) in self.mass.iter().enumerate() {
            if m > 0.0 && cum + m >= p {
                let frac = ((p - cum) / m).clamp(0.0, 1.0);
                return Ok(ExtendedTime(self.center(j) - w / 2.0 + frac * w));
            }
            cum += m;
        }
        // Rounding can leave the last finite bin a hair short of p.
        if p <= cum * (1.0 + 1e-12) && p > 0.0 {
            if let Some(j) = self.mass.iter().rposition(|&m| m > 0.0) {
                return Ok(ExtendedTime(self.center(j) + w / 2.0));
            }
        }
        Ok(ExtendedTime::INFINITY)
    }

    /// Merge every `factor` adjacent bins. Mass is only summed, never moved
    /// between groups.
    pub fn rebin(&self, factor: usize) -> Histogram {
        if factor <= 1 {
            return self.clone();
        }
        let mass = self.mass.chunks(factor).map(compensated_sum).collect();
        Histogram {
            bin_width: self.bin_width * factor as f64,
            origin: self.origin + (factor - 1) as f64 * self.bin_width / 2.0,
            mass,
            overflow_mass: self.overflow_mass,
        }
    }

    fn capped(self, max_bins: usize) -> Histogram {
        let factor = coarsening_factor(self.len(), max_bins);
        if factor > 1 {
            self.rebin(factor)
        } else {
            self
        }
    }

    /// Distribution of the sum of independent draws from `self` and `other`.
    ///
    /// Both widths must be equal up to an integer factor; the finer one is
    /// coarsened first. Overflow composes as `1 - (1 - a)(1 - b)`.
    pub fn convolve(&self, other: &Histogram, max_bins: usize) -> Result<Histogram, AnalysisError> {
        let (a, b) = match_widths(self, other)?;
        let overflow_mass = 1.0 - (1.0 - a.overflow_mass) * (1.0 - b.overflow_mass);
        let origin = a.origin + b.origin;
        if a.is_empty() || b.is_empty() {
            return Ok(Histogram {
                bin_width: a.bin_width,
                origin,
                mass: Vec::new(),
                overflow_mass,
            });
        }
        let mut mass = if a.len().min(b.len()) <= 32 || a.len() * b.len() <= DIRECT_WORK {
            direct_convolution(&a.mass, &b.mass)
        } else {
            fft_convolution(&a.mass, &b.mass)
        };
        for v in &mut mass {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let target = a.finite_mass() * b.finite_mass();
        let sum = compensated_sum(&mass);
        if sum > 0.0 {
            let scale = target / sum;
            mass.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(Histogram {
            bin_width: a.bin_width,
            origin,
            mass,
            overflow_mass,
        }
        .capped(max_bins))
    }

    /// Distribution of the sum of `k` independent copies, by binary
    /// exponentiation.
    pub fn self_convolve(&self, k: u64, max_bins: usize) -> Result<Histogram, AnalysisError> {
        if k == 0 {
            return Err(AnalysisError::InvalidPower);
        }
        let mut base = self.clone().capped(max_bins);
        let mut acc: Option<Histogram> = None;
        let mut k = k;
        loop {
            if k & 1 == 1 {
                acc = Some(match acc {
                    None => base.clone(),
                    Some(h) => h.convolve(&base, max_bins)?,
                });
            }
            k >>= 1;
            if k == 0 {
                break;
            }
            base = base.convolve(&base, max_bins)?;
        }
        Ok(acc.expect("k >= 1"))
    }

    /// `(level, quantile)` pairs.
    pub fn quantiles(&self, levels: &[f64]) -> Result<Vec<(f64, ExtendedTime)>, AnalysisError> {
        levels.iter().map(|&p| Ok((p, self.quantile(p)?))).collect()
    }
}

/// Neumaier summation; long mass vectors lose too much to plain summation.
fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_width(w: f64) -> Result<(), AnalysisError> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(AnalysisError::InvalidBinWidth(w))
    }
}

/// Smallest power of two `r` with `ceil(len / r) <= max_bins`.
fn coarsening_factor(len: usize, max_bins: usize) -> usize {
    let max_bins = max_bins.max(1);
    let mut r = 1usize;
    while len.div_ceil(r) > max_bins {
        r *= 2;
    }
    r
}

fn match_widths(a: &Histogram, b: &Histogram) -> Result<(Histogram, Histogram), AnalysisError> {
    let ratio = a.bin_width / b.bin_width;
    let (fine, coarse, swap) = if ratio >= 1.0 { (b, a, true) } else { (a, b, false) };
    let r = coarse.bin_width / fine.bin_width;
    let factor = r.round();
    if (r - factor).abs() > 1e-9 * r {
        return Err(AnalysisError::IncompatibleWidths {
            left: a.bin_width,
            right: b.bin_width,
        });
    }
    let mut fine = fine.rebin(factor as usize);
    fine.bin_width = coarse.bin_width;
    Ok(if swap {
        (coarse.clone(), fine)
    } else {
        (fine, coarse.clone())
    })
}

fn direct_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

fn fft_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = a.len() + b.len() - 1;
    let n = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fa.resize(n, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fb.resize(n, Complex::new(0.0, 0.0));
    forward.process(&mut fa);
    forward.process(&mut fb);
    fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
    inverse.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..len].iter().map(|c| c.re * scale).collect()
}

/// Kolmogorov-Smirnov distance between `h` and the empirical law of
/// `samples`. Infinite samples count towards the sample size only.
pub fn ks_distance(h: &Histogram, samples: &[f64]) -> f64 {
    let mut xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    xs.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = h.cdf(x);
        d = d.max((f - i as f64 / n).abs()).max((f - (i + 1) as f64 / n).abs());
    }
    d
}
