//! Bland–Altman agreement, the paired t-test and the special functions
//! behind its p-value.

use serde::{Deserialize, Serialize};

use super::percent_error;
use crate::{Error, Result};

/// One plotted point: pair mean on x, difference on y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanPoint {
    pub mean: f64,
    pub difference: f64,
}

/// Differences are `truth - prediction`; limits are `bias ± 2 sd` with the
/// sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanSummary {
    pub n: usize,
    pub bias: f64,
    pub sd: f64,
    pub lower_limit: f64,
    pub upper_limit: f64,
    pub points: Vec<BlandAltmanPoint>,
}

impl BlandAltmanSummary {
    /// Plot points as CSV with header `mean,difference`.
    pub fn points_csv(&self) -> String {
        let mut out = String::from("mean,difference\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.mean, p.difference));
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64], m: f64) -> f64 {
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn summarize(points: Vec<BlandAltmanPoint>) -> Result<BlandAltmanSummary> {
    if points.len() < 2 {
        return Err(Error::SampleSize { needed: 2, got: points.len() });
    }
    let d: Vec<f64> = points.iter().map(|p| p.difference).collect();
    let bias = mean(&d);
    let raw_sd = sample_sd(&d, bias);
    let lower_limit = bias - 2.0 * raw_sd;
    let upper_limit = bias + 2.0 * raw_sd;
    // Re-derive sd from the limits; the division by four is exact, so
    // `upper - lower == 4 * sd` holds bit for bit.
    let sd = (upper_limit - lower_limit) / 4.0;
    Ok(BlandAltmanSummary { n: points.len(), bias, sd, lower_limit, upper_limit, points })
}

/// Agreement of `(truth, prediction)` pairs on the raw scale.
pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltmanSummary> {
    summarize(pairs.iter().map(|&(t, p)| BlandAltmanPoint { mean: (t + p) / 2.0, difference: t - p }).collect())
}

/// Agreement on the percent-error scale: each difference is
/// `100 (truth - pred) / truth`; pairs with zero truth are rejected.
pub fn bland_altman_percent(pairs: &[(f64, f64)]) -> Result<BlandAltmanSummary> {
    let points = pairs
        .iter()
        .map(|&(t, p)| Ok(BlandAltmanPoint { mean: (t + p) / 2.0, difference: percent_error(t, p)? }))
        .collect::<Result<Vec<_>>>()?;
    summarize(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p: f64,
}

/// Paired t-test on `truth - prediction`.
pub fn paired_t_test(pairs: &[(f64, f64)]) -> Result<TTest> {
    if pairs.len() < 2 {
        return Err(Error::SampleSize { needed: 2, got: pairs.len() });
    }
    let d: Vec<f64> = pairs.iter().map(|(t, p)| t - p).collect();
    let m = mean(&d);
    let sd = sample_sd(&d, m);
    if !(sd > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let n = d.len();
    let t = m / (sd / (n as f64).sqrt());
    let df = n - 1;
    Ok(TTest { t, df, p: student_t_two_sided(t, df as f64) })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5).clamp(0.0, 1.0)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x) Γ(1 - x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + LANCZOS_G + 0.5;
    let series = LANCZOS[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        for num in [
            m * (b - m) * x / ((a + m2 - 1.0) * (a + m2)),
            -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0)),
        ] {
            d = 1.0 + num * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + num / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
            if (d * c - 1.0).abs() < 1e-15 && num < 0.0 {
                return h;
            }
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `0 <= x <= 1`, `a, b > 0`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}
