//! Small statistics helpers shared by the estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance together with a standard error assuming the
/// fourth central moment is estimated from the same sample.
pub fn variance_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 4 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    let se = ((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
    (var, se)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Binomial standard deviation of an empirical frequency with true value `p`.
pub fn binomial_sd(p: f64, trials: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Outcome of a one-sided conformance check `frequency <= bound + 3σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub name: String,
    pub hits: usize,
    pub trials: usize,
    pub frequency: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
}

impl TailCheck {
    pub fn new(name: impl Into<String>, hits: usize, trials: usize, bound: f64) -> Self {
        let frequency = hits as f64 / trials as f64;
        let slack = 3.0 * binomial_sd(bound, trials);
        Self {
            name: name.into(),
            hits,
            trials,
            frequency,
            bound,
            slack,
            pass: frequency <= bound + slack,
        }
    }
}

/// Ordinary or weighted least-squares line `y = intercept + slope * x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope: from residuals for unweighted fits, from
    /// the supplied per-point errors for weighted fits.
    pub slope_se: f64,
    pub residuals: Vec<f64>,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    fit_impl(x, y, None)
}

/// Weighted fit with known per-point standard errors `sigma`.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<LinearFit> {
    fit_impl(x, y, Some(sigma))
}

fn fit_impl(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<LinearFit> {
    if x.len() != y.len() || sigma.is_some_and(|s| s.len() != x.len()) {
        return Err(Error::Invalid("fit inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::FitPoints { min: 2, got: x.len() });
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|s| 1.0 / (s * s).max(1e-300)).collect(),
        None => vec![1.0; x.len()],
    };
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Invalid("fit abscissae are all equal".into()));
    }
    let sxy: f64 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (x, y))| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(x, y)| y - intercept - slope * x).collect();
    let slope_se = if sigma.is_some() {
        (1.0 / sxx).sqrt()
    } else if x.len() > 2 {
        let rss: f64 = residuals.iter().map(|r| r * r).sum();
        (rss / (x.len() as f64 - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        residuals,
    })
}

/// Empirical quantile as the order statistic of rank `ceil(q * len)`
/// (1-based), with a distribution-free 95% confidence interval from the
/// normal approximation of the binomial rank distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderStatistic {
    pub rank: usize,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn order_statistic(sorted: &[f64], q: f64) -> OrderStatistic {
    let len = sorted.len();
    let nf = len as f64;
    let rank = ((q * nf).ceil() as usize).clamp(1, len);
    let spread = 1.96 * (nf * q * (1.0 - q)).sqrt();
    let lo = ((q * nf - spread).floor() as isize).clamp(1, len as isize) as usize;
    let hi = ((q * nf + spread).ceil() as usize + 1).clamp(1, len);
    OrderStatistic {
        rank,
        value: sorted[rank - 1],
        ci_low: sorted[lo - 1],
        ci_high: sorted[hi - 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|x| 0.5 + 2.0 * x).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 0.5).abs() < 1e-12);
        assert!(f.slope_se < 1e-10);
        assert!(matches!(linear_fit(&[1.0], &[2.0]), Err(Error::FitPoints { .. })));
    }

    #[test]
    fn weighted_fit_uses_sigmas() {
        let x = [0.0, 1.0, 2.0];
        let y = [0.0, 1.0, 2.0];
        let f = weighted_linear_fit(&x, &y, &[0.1, 0.1, 0.1]).unwrap();
        // var(slope) = σ² / Σ (x - x̄)²
        assert!((f.slope_se - (0.01f64 / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(25, 100, 1.96);
        assert!(lo < 0.25 && 0.25 < hi);
        assert_eq!(wilson_interval(0, 10, 1.96).0, 0.0);
    }

    #[test]
    fn order_statistics_monotone_in_q() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let a = order_statistic(&xs, 0.75);
        assert_eq!(a.rank, 75);
        assert_eq!(a.value, 75.0);
        assert!(a.ci_low <= a.value && a.value <= a.ci_high);
        assert!(order_statistic(&xs, 0.01).value <= order_statistic(&xs, 0.99).value);
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let (v, se) = variance_se(&[2.0; 10]);
        assert_eq!(v, 0.0);
        assert_eq!(se, 0.0);
    }
}
