//! Simulation configuration, read from JSON.
//!
//! Every field has a default, so a config file only lists what it changes:
//!
//! ```json
//! {
//!   "target": {"fn": "sine", "amp": 1.0, "freq": 1.0},
//!   "beta": 2.0, "d": 1, "k": 3,
//!   "n": [250, 500, 1000, 2000, 4000], "reps": 200, "seed": 7,
//!   "bandwidth": {"rule": "estimation", "c": 4.0},
//!   "m_rule": {"rule": "rate", "offset": 1, "cap": 20}
//! }
//! ```

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::SimError;

/// Regression functions `f₀` on `[0,1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetFn {
    Zero,
    Constant {
        value: f64,
    },
    /// `slope·(x₁ - ½)`.
    Linear {
        slope: f64,
    },
    /// `amp·sin(2π·freq·x₁)`.
    Sine {
        amp: f64,
        freq: f64,
    },
    /// `amp·Σ_j sin(2π·freq·x_j)`, an additive function with centred components.
    AdditiveSine {
        amp: f64,
        freq: f64,
    },
    /// `amp·Π_j sin(2π·freq·x_j)`.
    ProductSine {
        amp: f64,
        freq: f64,
    },
}

impl Default for TargetFn {
    fn default() -> Self {
        TargetFn::Sine {
            amp: 1.0,
            freq: 1.0,
        }
    }
}

impl TargetFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TargetFn::Zero => 0.0,
            TargetFn::Constant { value } => value,
            TargetFn::Linear { slope } => slope * (x[0] - 0.5),
            TargetFn::Sine { amp, freq } => amp * (2.0 * PI * freq * x[0]).sin(),
            TargetFn::AdditiveSine { amp, freq } => {
                amp * x.iter().map(|v| (2.0 * PI * freq * v).sin()).sum::<f64>()
            }
            TargetFn::ProductSine { amp, freq } => {
                amp * x
                    .iter()
                    .map(|v| (2.0 * PI * freq * v).sin())
                    .product::<f64>()
            }
        }
    }

    /// Same shape with amplitude multiplied by `s`.
    pub fn scaled(&self, s: f64) -> TargetFn {
        match *self {
            TargetFn::Zero => TargetFn::Zero,
            TargetFn::Constant { value } => TargetFn::Constant { value: s * value },
            TargetFn::Linear { slope } => TargetFn::Linear { slope: s * slope },
            TargetFn::Sine { amp, freq } => TargetFn::Sine { amp: s * amp, freq },
            TargetFn::AdditiveSine { amp, freq } => TargetFn::AdditiveSine { amp: s * amp, freq },
            TargetFn::ProductSine { amp, freq } => TargetFn::ProductSine { amp: s * amp, freq },
        }
    }
}

/// Design density `Q` on `[0,1]^d`, bounded above and below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Density {
    #[default]
    Uniform,
    /// Product of `(1-a) + 2ax` per coordinate, `0 ≤ a < 1`.
    Tilted { a: f64 },
}

impl Density {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Density::Uniform => 1.0,
            Density::Tilted { a } => x.iter().map(|v| (1.0 - a) + 2.0 * a * v).product(),
        }
    }

    /// Inverse marginal CDF applied to a uniform draw.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        match *self {
            Density::Uniform => u,
            Density::Tilted { a } => {
                // a x² + (1-a) x = u
                let b = 1.0 - a;
                (2.0 * u / (b + (b * b + 4.0 * a * u).sqrt())).clamp(0.0, 1.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    #[default]
    Gaussian,
    /// Student t with 5 degrees of freedom scaled to unit variance.
    StudentT5,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    pub law: NoiseLaw,
    pub tau: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Noise {
            law: NoiseLaw::Gaussian,
            tau: 1.0,
        }
    }
}

/// How the interior knot count `M` follows `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bandwidth {
    /// `M = round(c·n^{1/(2β+d)})`.
    Estimation { c: f64 },
    /// `M = round(c·n^{2/(4β+d)})`.
    Testing { c: f64 },
    /// `M = round(c·n^{1/(2β+d)+extra})`, finer than the estimation rule.
    Undersmoothed { c: f64, extra: f64 },
    Fixed {
        #[serde(rename = "M")]
        m: usize,
    },
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Estimation { c: 1.0 }
    }
}

impl Bandwidth {
    /// Interior knot count, floored at 2. Additive fits use `d = 1`.
    pub fn knots(&self, n: usize, beta: f64, d: usize) -> usize {
        let n = n as f64;
        let d = d as f64;
        let raw = match *self {
            Bandwidth::Estimation { c } => c * n.powf(1.0 / (2.0 * beta + d)),
            Bandwidth::Testing { c } => c * n.powf(2.0 / (4.0 * beta + d)),
            Bandwidth::Undersmoothed { c, extra } => c * n.powf(1.0 / (2.0 * beta + d) + extra),
            Bandwidth::Fixed { m } => m as f64,
        };
        (raw.round() as usize).max(2)
    }
}

/// Network precision `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum MRule {
    /// `m = ⌈log₄ n^{(2β+2d)/(2β+d)}⌉ + offset`, capped.
    Rate {
        offset: usize,
        cap: usize,
    },
    Fixed {
        m: usize,
    },
}

impl Default for MRule {
    fn default() -> Self {
        MRule::Rate { offset: 1, cap: 20 }
    }
}

impl MRule {
    pub fn precision(&self, n: usize, beta: f64, d: usize) -> usize {
        match *self {
            MRule::Fixed { m } => m,
            MRule::Rate { offset, cap } => {
                let d = d as f64;
                let expo = (2.0 * beta + 2.0 * d) / (2.0 * beta + d);
                let m = ((n as f64).ln() * expo / 4f64.ln()).ceil() as usize + offset;
                m.clamp(1, cap)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub target: TargetFn,
    /// Smoothness tag attached to the target; not verified.
    pub beta: f64,
    pub d: usize,
    /// Fit the additive model instead of the tensor pilot.
    pub additive: bool,
    pub density: Density,
    pub noise: Noise,
    pub n: Vec<usize>,
    pub k: usize,
    pub bandwidth: Bandwidth,
    pub m_rule: MRule,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Studentize with this `τ²` instead of `τ̂²`.
    pub tau_known: Option<f64>,
    /// Points for pointwise intervals.
    pub ci_points: Vec<f64>,
    /// Signal multipliers for power curves.
    pub scales: Vec<f64>,
    /// Knot counts swept by the diagnostics.
    pub diag_knots: Vec<usize>,
    /// Random spline draws for the norm-equivalence check.
    pub diag_draws: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            target: TargetFn::default(),
            beta: 2.0,
            d: 1,
            additive: false,
            density: Density::Uniform,
            noise: Noise::default(),
            n: vec![250, 500, 1000, 2000, 4000],
            k: 3,
            bandwidth: Bandwidth::default(),
            m_rule: MRule::default(),
            reps: 200,
            seed: 1,
            alpha: 0.05,
            tau_known: None,
            ci_points: vec![0.25, 0.5, 0.75],
            scales: vec![0.0, 1.0, 2.0, 4.0, 8.0],
            diag_knots: vec![4, 8, 16],
            diag_draws: 200,
        }
    }
}

impl SimConfig {
    pub fn from_json(s: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.d == 0 || self.d > 3 {
            return bad(format!("d must be 1, 2 or 3, got {}", self.d));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return bad("n list must be non-empty and positive".into());
        }
        if self.reps == 0 {
            return bad("reps must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.noise.tau >= 0.0) {
            return bad(format!(
                "noise tau must be non-negative, got {}",
                self.noise.tau
            ));
        }
        if let Density::Tilted { a } = self.density {
            if !(0.0..1.0).contains(&a) {
                return bad(format!("tilted density needs 0 ≤ a < 1, got {a}"));
            }
        }
        if let Some(t) = self.tau_known {
            if !(t > 0.0) {
                return bad(format!("tau_known must be positive, got {t}"));
            }
        }
        if self.ci_points.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return bad("ci_points must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Knot count for sample size `n`.
    pub fn knots_for(&self, n: usize) -> usize {
        let d = if self.additive { 1 } else { self.d };
        self.bandwidth.knots(n, self.beta, d)
    }

    pub fn precision_for(&self, n: usize) -> usize {
        let d = if self.additive { 1 } else { self.d };
        self.m_rule.precision(n, self.beta, d)
    }

    /// `n^{-2β/(4β+d)}`, the testing separation rate.
    pub fn separation(&self, n: usize) -> f64 {
        (n as f64).powf(-2.0 * self.beta / (4.0 * self.beta + self.d as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_partial_files() {
        let cfg = SimConfig::default();
        let back = SimConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial = SimConfig::from_json(r#"{"d": 2, "target": {"fn": "zero"}}"#).unwrap();
        assert_eq!(partial.d, 2);
        assert_eq!(partial.target, TargetFn::Zero);
        assert!(SimConfig::from_json(r#"{"dd": 2}"#).is_err());
        assert!(SimConfig::from_json(r#"{"alpha": 1.5}"#).is_err());
    }

    #[test]
    fn bandwidth_rules() {
        assert_eq!(Bandwidth::Estimation { c: 1.0 }.knots(1000, 2.0, 1), 4);
        assert_eq!(Bandwidth::Estimation { c: 1.0 }.knots(10, 2.0, 1), 2);
        assert_eq!(Bandwidth::Testing { c: 1.0 }.knots(2000, 2.0, 1), 5);
        assert_eq!(Bandwidth::Fixed { m: 9 }.knots(10, 2.0, 1), 9);
        let json = serde_json::to_string(&Bandwidth::Fixed { m: 9 }).unwrap();
        assert_eq!(json, r#"{"rule":"fixed","M":9}"#);
    }

    #[test]
    fn precision_rule() {
        // 4000^{6/5} ≈ 20840, log₄ ≈ 7.17
        assert_eq!(MRule::default().precision(4000, 2.0, 1), 9);
        assert_eq!(MRule::Rate { offset: 0, cap: 5 }.precision(4000, 2.0, 1), 5);
    }

    #[test]
    fn tilted_inverse_cdf() {
        let q = Density::Tilted { a: 0.4 };
        for u in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let x = q.inverse_cdf(u);
            let cdf = 0.4 * x * x + 0.6 * x;
            assert!((cdf - u).abs() < 1e-12);
        }
    }
}
