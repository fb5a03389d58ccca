//! Monte Carlo estimates, confidence intervals and a few classical tests.
//!
//! Per-path results are always collected in path order and reduced
//! sequentially, so every estimate is independent of the thread schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::Result;

/// Compensated (Neumaier) sum in slice order.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = neumaier_sum(values.iter().copied()) / n as f64;
        let stderr = if n > 1 {
            let ss = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean)));
            (ss / ((n - 1) as f64 * n as f64)).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }

    /// Two-sided interval `mean +- z * stderr` at the given confidence level.
    pub fn interval(&self, confidence: f64) -> Interval {
        let z = normal_quantile(confidence);
        Interval { lo: self.mean - z * self.stderr, hi: self.mean + z * self.stderr }
    }

    /// True when `|mean - target| <= k * stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Two-sided standard normal quantile: `z` with `P(|N| <= z) = confidence`.
pub fn normal_quantile(confidence: f64) -> f64 {
    assert!(confidence > 0.0 && confidence < 1.0, "confidence must lie in (0, 1)");
    Normal::standard().inverse_cdf(0.5 + 0.5 * confidence)
}

/// One-sided upper quantile `z` with `P(N <= z) = level`.
pub fn normal_upper_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(level)
}

/// `|a - b| <= k * sqrt(se_a^2 + se_b^2)` for independent estimates.
pub fn agree(a: &McEstimate, b: &McEstimate, k: f64) -> bool {
    (a.mean - b.mean).abs() <= k * a.stderr.hypot(b.stderr)
}

/// Evaluates `f(path)` for `0..n` in parallel and returns the results in path
/// order; the error with the smallest path index wins.
pub fn par_paths<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = (0..n as u64).into_par_iter().map(f).collect();
    results.into_iter().collect()
}

/// Ordinary least squares slope and its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - my - slope * (a - mx);
            e * e
        })
        .sum();
    let se = if x.len() > 2 { (resid / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, se)
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov statistic and asymptotic p-value against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let en = n.sqrt();
    (d, kolmogorov_q((en + 0.12 + 0.11 / en) * d))
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    (d, kolmogorov_q((en + 0.12 + 0.11 / en) * d))
}
