//! Paired two-sided t-test over per-image metric values.

use alloc::format;
use alloc::string::String;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::metrics::serde_f64;
use crate::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Student t cumulative distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `P(|T| >= |t|)`.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SignificantImprovement,
    SignificantDegradation,
    NotSignificant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    #[serde(with = "serde_f64")]
    pub t: f64,
    pub p_value: f64,
    pub df: usize,
    /// Mean of `a - b`.
    #[serde(with = "serde_f64")]
    pub mean_difference: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Paired two-sided t-test of `a` (candidate) against `b` (reference).
///
/// The verdict reads the sign of the mean difference through `direction`.
/// Zero-variance differences are reported with `t = ±∞, p = 0` (or `t = 0,
/// p = 1` when all differences vanish) and a warning.
pub fn paired_ttest(a: &[f64], b: &[f64], direction: MetricDirection) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} paired values", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let nf = n as f64;
    let mean = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / nf;
    let var = a.iter().zip(b).map(|(x, y)| (x - y - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let df = n - 1;
    let (t, p, warning) = if sd == 0.0 {
        let warning = Some(String::from("zero variance in paired differences"));
        if mean == 0.0 {
            (0.0, 1.0, warning)
        } else {
            (f64::INFINITY.copysign(mean), 0.0, warning)
        }
    } else {
        let t = mean / (sd / nf.sqrt());
        (t, two_sided_p(t, df as f64), None)
    };
    let better = match direction {
        MetricDirection::HigherIsBetter => mean > 0.0,
        MetricDirection::LowerIsBetter => mean < 0.0,
    };
    let verdict = if p > SIGNIFICANCE_LEVEL || mean == 0.0 {
        Verdict::NotSignificant
    } else if better {
        Verdict::SignificantImprovement
    } else {
        Verdict::SignificantDegradation
    };
    Ok(TTestResult {
        t,
        p_value: p,
        df,
        mean_difference: mean,
        verdict,
        warning,
    })
}
