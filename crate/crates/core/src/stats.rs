//! Pearson correlation with two-sided p-value and Fisher-z 95% CI, paired
//! t-test across seeds, and mean ± sample-std summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample size error: {0}")]
    SampleSize(String),
    #[error("undefined correlation: {0}")]
    ConstantSeries(String),
    #[error("degenerate test: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Normal quantile for the 95% two-sided interval.
const Z_975: f64 = 1.959963985;
const BETA_TOL: f64 = 1e-12;
const BETA_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub n: usize,
    pub p_two_sided: f64,
    /// Fisher-z interval; `None` when n < 4.
    pub ci95_low: Option<f64>,
    pub ci95_high: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub mean_diff: f64,
    pub t_statistic: f64,
    pub degrees_freedom: usize,
    pub p_two_sided: f64,
    /// Set when the differences have zero variance but nonzero mean; the
    /// t statistic saturates and p is reported as 0.
    pub saturated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n−1); `None` for a single value.
    pub sample_std: Option<f64>,
}

/// Product-moment correlation with Student-t p-value and Fisher-z CI.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    let n = xs.len();
    if n != ys.len() {
        return Err(StatsError::SampleSize(format!(
            "series lengths differ: {n} vs {}",
            ys.len()
        )));
    }
    if n < 3 {
        return Err(StatsError::SampleSize(format!(
            "pearson needs n >= 3, got {n}"
        )));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantSeries(
            "correlation of a constant series is undefined".into(),
        ));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = n - 2;
    let p = if (1.0 - r * r) <= 0.0 {
        0.0
    } else {
        let t = r * ((df as f64) / (1.0 - r * r)).sqrt();
        2.0 * (1.0 - student_t_cdf(t.abs(), df))
    };
    let (lo, hi) = if n >= 4 {
        let (lo, hi) = fisher_ci(r, n);
        (Some(lo), Some(hi))
    } else {
        (None, None)
    };
    Ok(CorrelationResult {
        r,
        n,
        p_two_sided: p.clamp(0.0, 1.0),
        ci95_low: lo,
        ci95_high: hi,
    })
}

/// Fisher z-transform interval: atanh(r) ± 1.96/√(n−3), back-transformed.
pub fn fisher_ci(r: f64, n: usize) -> (f64, f64) {
    let z = r.atanh();
    let half = Z_975 / ((n as f64) - 3.0).sqrt();
    ((z - half).tanh(), (z + half).tanh())
}

/// CDF of Student's t with `df` degrees of freedom, via the regularized
/// incomplete beta function.
pub fn student_t_cdf(t: f64, df: usize) -> f64 {
    assert!(df >= 1, "student_t_cdf needs df >= 1");
    if t == 0.0 {
        return 0.5;
    }
    let v = df as f64;
    let x = v / (v + t * t);
    let tail = 0.5 * reg_inc_beta(0.5 * v, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided paired t-test on same-index pairs.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTestResult> {
    let n = a.len();
    if n != b.len() {
        return Err(StatsError::SampleSize(format!(
            "series lengths differ: {n} vs {}",
            b.len()
        )));
    }
    if n < 2 {
        return Err(StatsError::SampleSize(format!(
            "paired t-test needs n >= 2, got {n}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let md = mean(&d);
    let var = d.iter().map(|&v| (v - md) * (v - md)).sum::<f64>() / ((n - 1) as f64);
    let df = n - 1;
    if var == 0.0 {
        if md == 0.0 {
            return Err(StatsError::Degenerate(
                "all paired differences are identically zero".into(),
            ));
        }
        // zero-variance, nonzero-mean differences: |t| -> infinity
        return Ok(PairedTestResult {
            mean_diff: md,
            t_statistic: if md > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
            degrees_freedom: df,
            p_two_sided: 0.0,
            saturated: true,
        });
    }
    let t = md / (var.sqrt() / (n as f64).sqrt());
    let p = 2.0 * (1.0 - student_t_cdf(t.abs(), df));
    Ok(PairedTestResult {
        mean_diff: md,
        t_statistic: t,
        degrees_freedom: df,
        p_two_sided: p.clamp(0.0, 1.0),
        saturated: false,
    })
}

/// Mean and sample standard deviation (n−1 denominator).
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(StatsError::SampleSize("summary of an empty series".into()));
    }
    let m = mean(values);
    let std = if values.len() >= 2 {
        let var = values.iter().map(|&v| (v - m) * (v - m)).sum::<f64>()
            / ((values.len() - 1) as f64);
        Some(var.sqrt())
    } else {
        None
    };
    Ok(Summary { mean: m, sample_std: std })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Regularized incomplete beta I_x(a, b) by Lentz continued fractions,
/// converged to 1e-12.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "x must lie in [0,1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b)
        - ln_gamma(a)
        - ln_gamma(b))
        .exp();
    // use the symmetry that keeps the continued fraction well-conditioned
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - front * beta_cont_frac(b, a, 1.0 - x) / b
    }
}

fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        // even step
        let num = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 + num * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + num / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let num = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + num * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + num / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < BETA_TOL {
            break;
        }
    }
    h
}

/// Lanczos approximation, g = 7.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i as f64) + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
