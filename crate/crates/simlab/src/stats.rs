//! Small summary statistics for Monte Carlo output.

use serde::{Deserialize, Serialize};
use splinenet::inference::normal_cdf;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Least-squares line `y = a + b x` with the standard error of `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub slope: f64,
    pub intercept: f64,
    pub std_error: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Slope {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let std_error = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Slope {
        slope,
        intercept,
        std_error,
    }
}

/// Slope of `log(loss)` against `log(n)`.
pub fn loglog_slope(n: &[usize], loss: &[f64]) -> Slope {
    let x: Vec<f64> = n.iter().map(|&v| (v as f64).ln()).collect();
    let y: Vec<f64> = loss.iter().map(|v| v.ln()).collect();
    ols(&x, &y)
}

/// Kolmogorov–Smirnov distance between the empirical law of `v` and `cdf`.
pub fn ks_distance(v: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

pub fn ks_normal(v: &[f64]) -> f64 {
    ks_distance(v, normal_cdf)
}

pub fn ks_uniform(v: &[f64]) -> f64 {
    ks_distance(v, |x| x.clamp(0.0, 1.0))
}

/// Fraction of `|z| ≥ z_{α/2}` for each level.
pub fn empirical_size(z: &[f64], alphas: &[f64]) -> Vec<f64> {
    alphas
        .iter()
        .map(|&a| {
            let crit = splinenet::inference::normal_quantile(1.0 - a / 2.0);
            z.iter().filter(|v| v.abs() >= crit).count() as f64 / z.len() as f64
        })
        .collect()
}
