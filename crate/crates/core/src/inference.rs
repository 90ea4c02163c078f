//! Pointwise confidence intervals and the goodness-of-fit test for `H₀: f₀ = 0`.
//!
//! Both procedures studentize with a noise variance `τ²` that is either the
//! residual estimate `τ̂² = rss/(n-q)` stored in the fit or a known value
//! supplied by the caller. The `χ²(q)` null law behind the test is exact only
//! for Gaussian errors.
//!
//! The asymptotic results these procedures rest on need the knot spacing `h`
//! to undersmooth and the precision `m` to grow fast enough; see
//! [`rate_condition_holds`]. Neither is checked here.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::estimator::{Dataset, PilotFit};
use crate::relunet::ReluNetwork;
use crate::splines::tensor_nonzeros;

/// Where the noise variance used for studentization comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum NoiseVariance {
    /// `τ̂² = rss/(n-q)` from the fit.
    #[default]
    Estimated,
    /// A known `τ²`.
    Known(f64),
}

impl NoiseVariance {
    fn resolve(self, fit: &PilotFit) -> Result<f64> {
        match self {
            NoiseVariance::Known(t) if t.is_finite() && t >= 0.0 => Ok(t),
            NoiseVariance::Known(t) => Err(Error::domain(format!(
                "known noise variance must be ≥ 0, got {t}"
            ))),
            NoiseVariance::Estimated => fit.tau2.ok_or_else(|| {
                Error::InvalidRegime(format!(
                    "τ̂² needs n > q (n = {}, q = {}); supply a known variance",
                    fit.n,
                    fit.q()
                ))
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseInterval {
    pub x: Vec<f64>,
    /// `f̂_net(x)`.
    pub estimate: f64,
    /// `V(x) = τ²·𝐃_k(x)ᵀ(ΦᵀΦ)⁻¹𝐃_k(x)`.
    pub variance: f64,
    pub alpha: f64,
    pub z: f64,
    pub lower: f64,
    pub upper: f64,
    pub tau2_used: f64,
    /// Set when `τ² = 0`, so the zero width carries no coverage guarantee.
    pub degenerate: bool,
}

impl PointwiseInterval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `‖f̂_net‖_n²`.
    #[serde(rename = "T_n")]
    pub t_n: f64,
    pub q: usize,
    pub n: usize,
    /// `(nT_n/τ² - q)/√(2q)`.
    #[serde(rename = "Z_n")]
    pub z_n: f64,
    pub alpha: f64,
    pub p_value: f64,
    pub reject: bool,
    pub tau2_used: f64,
    /// `‖f̂_pilot‖_n²`.
    pub pilot_t_n: f64,
    #[serde(rename = "pilot_Z_n")]
    pub pilot_z_n: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "level must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Quantile of the standard normal distribution (Wichura's AS241, PPND16).
///
/// Relative accuracy is about `1e-16` over `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return if p == 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::NAN
        };
    }
    if p >= 1.0 {
        return if p == 1.0 { f64::INFINITY } else { f64::NAN };
    }
    fn poly(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_545e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_7e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `ℙ(|N(0,1)| ≥ |z|)`.
pub fn two_sided_p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// `𝐃_k(x)ᵀ(ΦᵀΦ)⁻¹𝐃_k(x)` through the cached Cholesky factor.
pub fn leverage(fit: &PilotFit, x: &[f64]) -> Result<f64> {
    let chol = fit.gram_cholesky().ok_or_else(|| {
        Error::Numerical("Gram matrix is singular; the interval is undefined".into())
    })?;
    let mut dvec = DVector::zeros(fit.q());
    for (p, v) in tensor_nonzeros(&fit.grid, x)? {
        dvec[p] = v;
    }
    let sol = chol.solve(&dvec);
    Ok(dvec.dot(&sol))
}

/// The same quadratic form through an explicit inverse, for cross-checks.
pub fn leverage_explicit(fit: &PilotFit, x: &[f64]) -> Result<f64> {
    let inv = fit
        .gram
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("Gram matrix is singular".into()))?;
    let dvec = DVector::from_vec(crate::splines::eval_tensor_vector(&fit.grid, fit.d, x)?);
    Ok(dvec.dot(&(inv * &dvec)))
}

pub fn pointwise_ci(
    fit: &PilotFit,
    net: &ReluNetwork,
    x: &[f64],
    alpha: f64,
) -> Result<PointwiseInterval> {
    pointwise_ci_with(fit, net, x, alpha, NoiseVariance::Estimated)
}

pub fn pointwise_ci_with(
    fit: &PilotFit,
    net: &ReluNetwork,
    x: &[f64],
    alpha: f64,
    noise: NoiseVariance,
) -> Result<PointwiseInterval> {
    check_alpha(alpha)?;
    let estimate = net.evaluate(x)?[0];
    interval_at(fit, estimate, x, alpha, noise)
}

/// Interval around an externally computed centre, e.g. a batched network pass.
pub fn interval_at(
    fit: &PilotFit,
    estimate: f64,
    x: &[f64],
    alpha: f64,
    noise: NoiseVariance,
) -> Result<PointwiseInterval> {
    check_alpha(alpha)?;
    let tau2 = noise.resolve(fit)?;
    let lev = leverage(fit, x)?;
    if !(lev > 0.0) {
        return Err(Error::Numerical(format!(
            "leverage at {x:?} is {lev}, expected > 0"
        )));
    }
    let variance = tau2 * lev;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let half = z * variance.sqrt();
    Ok(PointwiseInterval {
        x: x.to_vec(),
        estimate,
        variance,
        alpha,
        z,
        lower: estimate - half,
        upper: estimate + half,
        tau2_used: tau2,
        degenerate: tau2 == 0.0,
    })
}

pub fn gof_test(
    fit: &PilotFit,
    net: &ReluNetwork,
    data: &Dataset,
    alpha: f64,
) -> Result<TestResult> {
    gof_test_with(fit, net, data, alpha, NoiseVariance::Estimated)
}

pub fn gof_test_with(
    fit: &PilotFit,
    net: &ReluNetwork,
    data: &Dataset,
    alpha: f64,
    noise: NoiseVariance,
) -> Result<TestResult> {
    if data.n() != fit.n {
        return Err(Error::domain(format!(
            "fit used {} observations, dataset has {}",
            fit.n,
            data.n()
        )));
    }
    let values = net.evaluate_flat(data.x())?;
    gof_from_values(fit, &values, alpha, noise)
}

/// Test from network values `f̂_net(𝐗_i)` at the fit's design points.
pub fn gof_from_values(
    fit: &PilotFit,
    net_values: &[f64],
    alpha: f64,
    noise: NoiseVariance,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    let (n, q) = (fit.n, fit.q());
    if q >= n {
        return Err(Error::InvalidRegime(format!(
            "the test needs q < n, got q = {q}, n = {n}"
        )));
    }
    if net_values.len() != n || fit.fitted.len() != n {
        return Err(Error::domain("design-point values do not match the fit"));
    }
    let tau2 = noise.resolve(fit)?;
    if tau2 <= 0.0 {
        return Err(Error::Numerical(
            "noise variance is zero; the statistic is undefined".into(),
        ));
    }
    let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / n as f64;
    let normalise = |t: f64| (n as f64 * t / tau2 - q as f64) / (2.0 * q as f64).sqrt();
    let t_n = norm2(net_values);
    let pilot_t_n = norm2(&fit.fitted);
    let z_n = normalise(t_n);
    let z_crit = normal_quantile(1.0 - alpha / 2.0);
    Ok(TestResult {
        t_n,
        q,
        n,
        z_n,
        alpha,
        p_value: two_sided_p_value(z_n),
        reject: z_n.abs() >= z_crit,
        tau2_used: tau2,
        pilot_t_n,
        pilot_z_n: normalise(pilot_t_n),
    })
}

/// Upper bound on `|nT_n^{net} - nT_n^{pilot}|/√(2q)` given the sup-norm gap
/// `bound` between the two estimators.
pub fn statistic_gap_bound(n: usize, q: usize, bound: f64, pilot_norm_n: f64) -> f64 {
    n as f64 * bound * (2.0 * pilot_norm_n + bound) / (2.0 * q as f64).sqrt()
}

/// Finite-sample form `n^{1/2}h^{-d/2} ≤ 4^m` of the precision requirement.
pub fn rate_condition_holds(n: usize, h: f64, d: usize, m: usize) -> bool {
    (n as f64).sqrt() * h.powf(-(d as f64) / 2.0) <= 4f64.powi(m as i32)
}

/// Rejection frequency of `run(rep)` over `reps ≥ 100` replications.
pub fn power_at<F>(reps: usize, mut run: F) -> Result<f64>
where
    F: FnMut(usize) -> Result<TestResult>,
{
    if reps < 100 {
        return Err(Error::domain(format!(
            "power needs at least 100 replications, got {reps}"
        )));
    }
    let mut rejected = 0usize;
    for rep in 0..reps {
        rejected += usize::from(run(rep)?.reject);
    }
    Ok(rejected as f64 / reps as f64)
}
