//! Performance scores, Anderson–Darling normality test and Student t-tests.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use thiserror::Error;

/// 5% critical value for the modified statistic `A*²` when mean and variance
/// are both estimated from the sample.
pub const AD_CRITICAL_5PCT: f64 = 0.752;
pub const AD_MIN_SAMPLES: usize = 8;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("all completion times are equal; the score range is zero")]
    DegenerateRange,
    #[error("times must be positive and finite")]
    InvalidTime,
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("sample lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("all paired differences are equal")]
    DegenerateVariance,
    #[error("sample contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Critical value for the normality test, p-value for t-tests.
    pub threshold_or_p: f64,
    pub reject: bool,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scores: Vec<(String, f64)>,
    pub t_min: f64,
    pub t_max: f64,
}

/// Min-max normalized completion time: `S_i = (t_max − t_i)/(t_max − t_min)`.
/// The fastest session scores 1, the slowest 0.
pub fn performance_scores(times: &[f64]) -> Result<Vec<f64>, StatsError> {
    if times.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: times.len(),
        });
    }
    if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(StatsError::InvalidTime);
    }
    let t_min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = t_max - t_min;
    if range <= 0.0 {
        return Err(StatsError::DegenerateRange);
    }
    Ok(times.iter().map(|t| (t_max - t) / range).collect())
}

pub fn score_sessions(times: &[(String, f64)]) -> Result<ScoreReport, StatsError> {
    let values: Vec<f64> = times.iter().map(|(_, t)| *t).collect();
    let scores = performance_scores(&values)?;
    Ok(ScoreReport {
        scores: times.iter().map(|(id, _)| id.clone()).zip(scores).collect(),
        t_min: values.iter().copied().fold(f64::INFINITY, f64::min),
        t_max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `1 − Φ(z)` without cancellation.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Anderson–Darling statistic `A²` against a normal with the sample's own
/// mean and standard deviation.
pub fn anderson_darling_statistic(sample: &[f64]) -> Result<f64, StatsError> {
    let n = sample.len();
    if n < AD_MIN_SAMPLES {
        return Err(StatsError::TooFewSamples {
            needed: AD_MIN_SAMPLES,
            got: n,
        });
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let m = mean(sample);
    let var = variance(sample, m);
    if !(var > 0.0) {
        return Err(StatsError::ZeroVariance);
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = sample.iter().map(|x| (x - m) / sd).collect();
    z.sort_by(f64::total_cmp);

    let nf = n as f64;
    let sum: f64 = (0..n)
        .map(|i| {
            let weight = (2 * i + 1) as f64;
            weight * (normal_cdf(z[i]).ln() + normal_sf(z[n - 1 - i]).ln())
        })
        .sum();
    Ok(-nf - sum / nf)
}

/// One-sample normality test at the 5% level using the small-sample
/// modification `A*² = A²·(1 + 0.75/n + 2.25/n²)`.
pub fn ad_normality(sample: &[f64]) -> Result<TestResult, StatsError> {
    let a2 = anderson_darling_statistic(sample)?;
    let n = sample.len() as f64;
    let modified = a2 * (1.0 + 0.75 / n + 2.25 / (n * n));
    Ok(TestResult {
        statistic: modified,
        threshold_or_p: AD_CRITICAL_5PCT,
        reject: !(modified <= AD_CRITICAL_5PCT),
        n: sample.len(),
        df: None,
    })
}

/// Two-sided p-value of Student's t with `df` degrees of freedom, via the
/// regularized incomplete beta function: `p = I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Paired t-test on `d = a − b`, two-sided.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if d.iter().all(|x| *x == d[0]) {
        return Err(StatsError::DegenerateVariance);
    }
    let m = mean(&d);
    let sd = variance(&d, m).sqrt();
    let t = m / (sd / (n as f64).sqrt());
    let df = (n - 1) as f64;
    let p = student_t_two_sided_p(t, df);
    Ok(TestResult {
        statistic: t,
        threshold_or_p: p,
        reject: p < DEFAULT_ALPHA,
        n,
        df: Some(df),
    })
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFewSamples { needed: 2, got: s.len() });
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a, ma) / na, variance(b, mb) / nb);
    if va + vb == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = (ma - mb) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = student_t_two_sided_p(t, df);
    Ok(TestResult {
        statistic: t,
        threshold_or_p: p,
        reject: p < DEFAULT_ALPHA,
        n: a.len() + b.len(),
        df: Some(df),
    })
}
