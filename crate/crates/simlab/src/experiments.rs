//! Monte Carlo drivers: estimation rates, null calibration, interval
//! coverage, power curves and design diagnostics.
//!
//! Replications run in parallel; each one draws from its own random stream
//! and the reductions run sequentially over the collected records, so a
//! report depends only on the configuration.
//!
//! Network predictions are obtained by evaluating the basis network `𝐃̃_k`
//! (or `𝐁̃_k` per axis) once on the points of interest and applying the
//! fitted coefficients to the cached outputs. This is the output layer of
//! `f̂_net` applied to its last hidden representation, so the values agree
//! with evaluating the assembled network up to rounding.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use splinenet::constructor::{build_tilde_b_vector, build_tilde_d, CertifiedNet};
use splinenet::estimator::{design_matrix, fit_additive, fit_pilot, pilot_network_gap, PilotFit};
use splinenet::inference::{
    gof_from_values, interval_at, rate_condition_holds, statistic_gap_bound, NoiseVariance,
};
use splinenet::splines::{tensor_nonzeros, TensorIndexSet};
use splinenet::{KnotGrid, TruncatedPowerBasis};

use crate::config::{Density, SimConfig};
use crate::datagen::{draw, gen_data};
use crate::rng::stream;
use crate::stats::{empirical_size, ks_normal, loglog_slope, mean, variance, Slope};
use crate::{Result, SimError};

/// Levels at which null reports give the empirical size.
pub const SIZE_LEVELS: [f64; 3] = [0.01, 0.05, 0.1];

/// Largest cached `points × basis` matrix.
const MAX_CACHE: usize = 60_000_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub runtime_secs: f64,
}

impl Metadata {
    fn since(start: Instant) -> Self {
        Metadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            runtime_secs: start.elapsed().as_secs_f64(),
        }
    }
}

/// Any experiment's output together with the configuration that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SimConfig,
    #[serde(flatten)]
    pub body: ReportBody,
    pub warnings: Vec<String>,
    /// Varies between identical runs.
    pub metadata: Metadata,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ReportBody {
    Rates(RateReport),
    NullCalibration(NullReport),
    Coverage(CoverageReport),
    Power(PowerReport),
    Diagnostics(DiagReport),
}

fn noise_choice(cfg: &SimConfig) -> NoiseVariance {
    cfg.tau_known
        .map_or(NoiseVariance::Estimated, |t| NoiseVariance::Known(t * t))
}

/// Quadrature points and `Q`-weighted trapezoid weights on `[0,1]^d`.
#[derive(Clone, Debug)]
pub struct EvalGrid {
    pub d: usize,
    pub axis: Vec<f64>,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EvalGrid {
    /// `10⁴+1` points for `d = 1`, `201²` for `d = 2`, `51³` for `d = 3`.
    pub fn standard(d: usize, density: &Density) -> Self {
        let per_axis = match d {
            1 => 10_001,
            2 => 201,
            _ => 51,
        };
        Self::uniform(d, per_axis, density)
    }

    pub fn uniform(d: usize, per_axis: usize, density: &Density) -> Self {
        let h = 1.0 / (per_axis - 1) as f64;
        let axis: Vec<f64> = (0..per_axis).map(|r| r as f64 * h).collect();
        let axis_w: Vec<f64> = (0..per_axis)
            .map(|r| {
                if r == 0 || r == per_axis - 1 {
                    h / 2.0
                } else {
                    h
                }
            })
            .collect();
        let total = per_axis.pow(d as u32);
        let mut points = Vec::with_capacity(total * d);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            let start = points.len();
            points.resize(start + d, 0.0);
            for j in (0..d).rev() {
                let a = rem % per_axis;
                rem /= per_axis;
                points[start + j] = axis[a];
                w *= axis_w[a];
            }
            weights.push(w * density.eval(&points[start..start + d]));
        }
        EvalGrid {
            d,
            axis,
            points,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, r: usize) -> &[f64] {
        &self.points[r * self.d..(r + 1) * self.d]
    }

    /// `∫(f̂ - f₀)² dQ` from values on the grid.
    pub fn loss(&self, fitted: &[f64], truth: &[f64]) -> f64 {
        fitted
            .iter()
            .zip(truth)
            .zip(&self.weights)
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum()
    }
}

/// Sparse pilot basis and dense network basis on a fixed point set.
struct BasisCache {
    q: usize,
    sparse: Vec<Vec<(usize, f64)>>,
    /// Row-major `points × q`.
    net: Vec<f64>,
}

impl BasisCache {
    fn new(grid: &KnotGrid, dnet: &CertifiedNet, points: &[f64], d: usize) -> Result<Self> {
        let q = dnet.net.output_dim();
        let npts = points.len() / d;
        if npts * q > MAX_CACHE {
            return Err(SimError::Config(format!(
                "caching {npts} points × {q} basis functions exceeds the memory budget"
            )));
        }
        let sparse = points
            .chunks(d)
            .map(|p| tensor_nonzeros(grid, p))
            .collect::<splinenet::Result<Vec<_>>>()?;
        let net = dnet.net.evaluate_flat(points)?;
        Ok(BasisCache { q, sparse, net })
    }

    fn pilot(&self, c: &[f64]) -> Vec<f64> {
        self.sparse
            .iter()
            .map(|row| row.iter().map(|&(p, v)| c[p] * v).sum())
            .collect()
    }

    fn network(&self, c: &[f64]) -> Vec<f64> {
        self.net.chunks(self.q).map(|row| dot(row, c)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- rates

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateRecord {
    pub n: usize,
    pub rep: usize,
    #[serde(rename = "M")]
    pub knots: usize,
    pub m: usize,
    pub loss_pilot: f64,
    pub loss_net: f64,
    /// `max |f̂_net - f̂_pilot|` over the evaluation grid.
    pub sup_gap: f64,
    pub gap_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateSummary {
    pub n: usize,
    #[serde(rename = "M")]
    pub knots: usize,
    pub m: usize,
    pub q: usize,
    pub mean_loss_pilot: f64,
    pub mean_loss_net: f64,
    /// `|mean_net - mean_pilot| / mean_pilot`.
    pub relative_gap: f64,
    pub rate_condition_ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateReport {
    pub records: Vec<RateRecord>,
    pub summary: Vec<RateSummary>,
    pub slope_pilot: Slope,
    pub slope_net: Slope,
    pub gap_violations: usize,
}

impl RateReport {
    /// Rebuilds the per-`n` means and slopes from the records.
    pub fn recompute(records: &[RateRecord]) -> (Vec<(usize, f64, f64)>, Slope, Slope) {
        let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
        ns.dedup();
        let means: Vec<(usize, f64, f64)> = ns
            .iter()
            .map(|&n| {
                let rs: Vec<&RateRecord> = records.iter().filter(|r| r.n == n).collect();
                let lp: Vec<f64> = rs.iter().map(|r| r.loss_pilot).collect();
                let ln: Vec<f64> = rs.iter().map(|r| r.loss_net).collect();
                (n, mean(&lp), mean(&ln))
            })
            .collect();
        let lp: Vec<f64> = means.iter().map(|m| m.1).collect();
        let ln: Vec<f64> = means.iter().map(|m| m.2).collect();
        (means, loglog_slope(&ns, &lp), loglog_slope(&ns, &ln))
    }
}

pub fn run_rate_experiment(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    let span = *cfg.n.iter().max().unwrap() as f64 / *cfg.n.iter().min().unwrap() as f64;
    if cfg.n.len() < 4 || span < 10.0 || cfg.reps < 100 {
        warnings.push(
            "slope estimates want ≥ 4 sample sizes over ≥ 1 decade and ≥ 100 replications".into(),
        );
    }
    let eval = EvalGrid::standard(cfg.d, &cfg.density);
    let truth: Vec<f64> = eval
        .points
        .chunks(cfg.d)
        .map(|p| cfg.target.eval(p))
        .collect();
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for &n in &cfg.n {
        let knots = cfg.knots_for(n);
        let m = cfg.precision_for(n);
        let grid = KnotGrid::cardinal(knots, cfg.k)?;
        let (rs, q) = if cfg.additive {
            additive_rate_reps(cfg, n, &grid, m, &eval, &truth)?
        } else {
            tensor_rate_reps(cfg, n, &grid, m, &eval, &truth)?
        };
        let lp: Vec<f64> = rs.iter().map(|r| r.loss_pilot).collect();
        let ln: Vec<f64> = rs.iter().map(|r| r.loss_net).collect();
        let (mp, mn) = (mean(&lp), mean(&ln));
        let d_eff = if cfg.additive { 1 } else { cfg.d };
        let ok = rate_condition_holds(n, 1.0 / knots as f64, d_eff, m);
        if !ok {
            warnings.push(format!(
                "n = {n}: n^(1/2) h^(-d/2) exceeds 4^m with m = {m}"
            ));
        }
        summary.push(RateSummary {
            n,
            knots,
            m,
            q,
            mean_loss_pilot: mp,
            mean_loss_net: mn,
            relative_gap: (mn - mp).abs() / mp,
            rate_condition_ok: ok,
        });
        records.extend(rs);
    }
    let (_, slope_pilot, slope_net) = RateReport::recompute(&records);
    let gap_violations = records
        .iter()
        .filter(|r| !(r.sup_gap <= r.gap_bound))
        .count();
    Ok(ExperimentReport {
        config: cfg.clone(),
        body: ReportBody::Rates(RateReport {
            records,
            summary,
            slope_pilot,
            slope_net,
            gap_violations,
        }),
        warnings,
        metadata: Metadata::since(start),
    })
}

fn tensor_rate_reps(
    cfg: &SimConfig,
    n: usize,
    grid: &KnotGrid,
    m: usize,
    eval: &EvalGrid,
    truth: &[f64],
) -> Result<(Vec<RateRecord>, usize)> {
    let dnet = build_tilde_d(grid, cfg.d, m)?;
    let cache = BasisCache::new(grid, &dnet, &eval.points, cfg.d)?;
    let rs = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let data = gen_data(cfg, n, rep)?;
            let fit = fit_pilot(&data, grid, cfg.d)?;
            let pilot = cache.pilot(&fit.coeffs);
            let net = cache.network(&fit.coeffs);
            Ok(RateRecord {
                n,
                rep,
                knots: grid.interior_count(),
                m,
                loss_pilot: eval.loss(&pilot, truth),
                loss_net: eval.loss(&net, truth),
                sup_gap: max_abs_diff(&pilot, &net),
                gap_bound: pilot_network_gap(&fit, &dnet),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rs, cache.q))
}

fn additive_rate_reps(
    cfg: &SimConfig,
    n: usize,
    grid: &KnotGrid,
    m: usize,
    eval: &EvalGrid,
    truth: &[f64],
) -> Result<(Vec<RateRecord>, usize)> {
    let d = cfg.d;
    let basis = TruncatedPowerBasis::new(vec![grid.clone(); d])?;
    let bnet = build_tilde_b_vector(grid, m)?;
    let axis_net = bnet.net.evaluate_flat(&eval.axis)?;
    let nb = grid.basis_len();
    let na = eval.axis.len();
    let rs = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let data = gen_data(cfg, n, rep)?;
            let fit = fit_additive(&data, &basis)?;
            let mut comp_pilot = vec![vec![0.0; na]; d];
            let mut comp_net = vec![vec![0.0; na]; d];
            for j in 0..d {
                for (a, &x) in eval.axis.iter().enumerate() {
                    comp_pilot[j][a] = fit.component(j, x)?;
                    comp_net[j][a] = dot(&axis_net[a * nb..(a + 1) * nb], &fit.bspline_coeffs[j]);
                }
            }
            let mut pilot = Vec::with_capacity(eval.len());
            let mut net = Vec::with_capacity(eval.len());
            for flat in 0..eval.len() {
                let (mut vp, mut vn) = (fit.alpha, fit.alpha);
                let mut rem = flat;
                for j in (0..d).rev() {
                    let a = rem % na;
                    rem /= na;
                    vp += comp_pilot[j][a];
                    vn += comp_net[j][a];
                }
                pilot.push(vp);
                net.push(vn);
            }
            Ok(RateRecord {
                n,
                rep,
                knots: grid.interior_count(),
                m,
                loss_pilot: eval.loss(&pilot, truth),
                loss_net: eval.loss(&net, truth),
                sup_gap: max_abs_diff(&pilot, &net),
                gap_bound: fit.network_gap(m),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rs, basis.len()))
}

// ---------------------------------------------------------------- null

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NullRecord {
    pub rep: usize,
    #[serde(rename = "T_n")]
    pub t_n: f64,
    pub pilot_t_n: f64,
    #[serde(rename = "Z_n")]
    pub z_n: f64,
    #[serde(rename = "pilot_Z_n")]
    pub pilot_z_n: f64,
    pub tau2_used: f64,
    /// `|nT_n^{net} - nT_n^{pilot}|/√(2q)` and its certified ceiling.
    pub stat_gap: f64,
    pub stat_gap_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NullReport {
    pub n: usize,
    #[serde(rename = "M")]
    pub knots: usize,
    pub q: usize,
    pub m: usize,
    pub records: Vec<NullRecord>,
    /// Mean of `nT_n^{pilot}/τ²` divided by `q`.
    pub mean_chi2_over_q: f64,
    /// Sample variance of `nT_n^{pilot}/τ²`, to compare with `2q`.
    pub var_chi2: f64,
    pub ks_net: f64,
    pub ks_pilot: f64,
    pub levels: Vec<f64>,
    pub size_net: Vec<f64>,
    pub size_pilot: Vec<f64>,
    pub gap_violations: usize,
    pub rate_condition_ok: bool,
}

pub fn run_null_calibration(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    if cfg.noise.law != crate::config::NoiseLaw::Gaussian {
        warnings.push("the χ²(q) null law is exact only for Gaussian noise".into());
    }
    let n = cfg.n[0];
    let knots = cfg.knots_for(n);
    let m = cfg.precision_for(n);
    let grid = KnotGrid::cardinal(knots, cfg.k)?;
    let dnet = build_tilde_d(&grid, cfg.d, m)?;
    let q = dnet.net.output_dim();
    let noise = noise_choice(cfg);
    let records = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let data = gen_data(cfg, n, rep)?;
            let fit = fit_pilot(&data, &grid, cfg.d)?;
            let values = net_values(&dnet, &fit, data.x())?;
            let r = gof_from_values(&fit, &values, cfg.alpha, noise)?;
            let nn = n as f64;
            Ok(NullRecord {
                rep,
                t_n: r.t_n,
                pilot_t_n: r.pilot_t_n,
                z_n: r.z_n,
                pilot_z_n: r.pilot_z_n,
                tau2_used: r.tau2_used,
                stat_gap: (nn * r.t_n - nn * r.pilot_t_n).abs() / (2.0 * q as f64).sqrt(),
                stat_gap_bound: statistic_gap_bound(
                    n,
                    q,
                    pilot_network_gap(&fit, &dnet),
                    r.pilot_t_n.sqrt(),
                ),
            })
        })
        .collect::<Result<Vec<NullRecord>>>()?;
    let chi2: Vec<f64> = records
        .iter()
        .map(|r| n as f64 * r.pilot_t_n / r.tau2_used)
        .collect();
    let z: Vec<f64> = records.iter().map(|r| r.z_n).collect();
    let zp: Vec<f64> = records.iter().map(|r| r.pilot_z_n).collect();
    let ok = rate_condition_holds(n, 1.0 / knots as f64, cfg.d, m);
    if !ok {
        warnings.push(format!("n^(1/2) h^(-d/2) exceeds 4^m with m = {m}"));
    }
    let body = NullReport {
        n,
        knots,
        q,
        m,
        mean_chi2_over_q: mean(&chi2) / q as f64,
        var_chi2: variance(&chi2),
        ks_net: ks_normal(&z),
        ks_pilot: ks_normal(&zp),
        levels: SIZE_LEVELS.to_vec(),
        size_net: empirical_size(&z, &SIZE_LEVELS),
        size_pilot: empirical_size(&zp, &SIZE_LEVELS),
        gap_violations: records
            .iter()
            .filter(|r| !(r.stat_gap <= r.stat_gap_bound))
            .count(),
        rate_condition_ok: ok,
        records,
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        body: ReportBody::NullCalibration(body),
        warnings,
        metadata: Metadata::since(start),
    })
}

/// `f̂_net(𝐗_i) = Ĉᵀ𝐃̃_k(𝐗_i)` at the rows of `x`.
fn net_values(dnet: &CertifiedNet, fit: &PilotFit, x: &[f64]) -> Result<Vec<f64>> {
    let q = dnet.net.output_dim();
    let basis = dnet.net.evaluate_flat(x)?;
    Ok(basis.chunks(q).map(|row| dot(row, &fit.coeffs)).collect())
}

// ---------------------------------------------------------------- coverage

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub rep: usize,
    pub x0: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub x0: f64,
    pub truth: f64,
    pub coverage: f64,
    pub mean_half_width: f64,
    pub mean_bias: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    #[serde(rename = "M")]
    pub knots: usize,
    pub m: usize,
    pub points: Vec<CoveragePoint>,
    pub records: Vec<CoverageRecord>,
}

/// Evaluation point `(x₀, …, x₀)` in `d` dimensions.
fn diagonal(x0: f64, d: usize) -> Vec<f64> {
    vec![x0; d]
}

pub fn run_coverage(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let n = cfg.n[0];
    let knots = cfg.knots_for(n);
    let m = cfg.precision_for(n);
    let grid = KnotGrid::cardinal(knots, cfg.k)?;
    let dnet = build_tilde_d(&grid, cfg.d, m)?;
    let q = dnet.net.output_dim();
    let pts: Vec<Vec<f64>> = cfg.ci_points.iter().map(|&x| diagonal(x, cfg.d)).collect();
    let cached = dnet.net.evaluate_flat(&pts.concat())?;
    let noise = noise_choice(cfg);
    let nested = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let data = gen_data(cfg, n, rep)?;
            let fit = fit_pilot(&data, &grid, cfg.d)?;
            pts.iter()
                .enumerate()
                .map(|(r, x)| {
                    let est = dot(&cached[r * q..(r + 1) * q], &fit.coeffs);
                    let ci = interval_at(&fit, est, x, cfg.alpha, noise)?;
                    Ok(CoverageRecord {
                        rep,
                        x0: x[0],
                        estimate: est,
                        lower: ci.lower,
                        upper: ci.upper,
                        covered: ci.covers(cfg.target.eval(x)),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<CoverageRecord> = nested.into_iter().flatten().collect();
    let points = pts
        .iter()
        .map(|x| {
            let truth = cfg.target.eval(x);
            let rs: Vec<&CoverageRecord> = records.iter().filter(|r| r.x0 == x[0]).collect();
            let k = rs.len() as f64;
            CoveragePoint {
                x0: x[0],
                truth,
                coverage: rs.iter().filter(|r| r.covered).count() as f64 / k,
                mean_half_width: rs.iter().map(|r| 0.5 * (r.upper - r.lower)).sum::<f64>() / k,
                mean_bias: rs.iter().map(|r| r.estimate - truth).sum::<f64>() / k,
            }
        })
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        body: ReportBody::Coverage(CoverageReport {
            n,
            knots,
            m,
            points,
            records,
        }),
        warnings: Vec::new(),
        metadata: Metadata::since(start),
    })
}

// ---------------------------------------------------------------- power

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerRecord {
    pub scale: f64,
    pub rep: usize,
    #[serde(rename = "Z_n")]
    pub z_n: f64,
    #[serde(rename = "pilot_Z_n")]
    pub pilot_z_n: f64,
    pub reject: bool,
    pub signal_norm_n: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerPoint {
    pub scale: f64,
    pub power: f64,
    pub power_pilot: f64,
    /// Mean `‖f₀‖_n / n^{-2β/(4β+d)}`.
    pub normalized_signal: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerReport {
    pub n: usize,
    #[serde(rename = "M")]
    pub knots: usize,
    pub q: usize,
    pub m: usize,
    pub separation: f64,
    pub points: Vec<PowerPoint>,
    pub records: Vec<PowerRecord>,
}

/// Power at each scale, the signal being `scale·n^{-2β/(4β+d)}·f₀`.
///
/// All scales share the same design and noise draws per replication.
pub fn run_power_curve(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    if cfg.reps < 100 {
        warnings.push("power estimates want at least 100 replications".into());
    }
    let n = cfg.n[0];
    let knots = cfg.knots_for(n);
    let m = cfg.precision_for(n);
    let grid = KnotGrid::cardinal(knots, cfg.k)?;
    let dnet = build_tilde_d(&grid, cfg.d, m)?;
    let q = dnet.net.output_dim();
    let sep = cfg.separation(n);
    let noise = noise_choice(cfg);
    let nested = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let (x, eps) = draw(cfg, n, rep);
            let basis = dnet.net.evaluate_flat(&x)?;
            cfg.scales
                .iter()
                .map(|&s| {
                    let f = cfg.target.scaled(s * sep);
                    let signal: Vec<f64> = x.chunks(cfg.d).map(|p| f.eval(p)).collect();
                    let y = signal.iter().zip(&eps).map(|(a, b)| a + b).collect();
                    let data = splinenet::Dataset::new(cfg.d, x.clone(), y)?;
                    let fit = fit_pilot(&data, &grid, cfg.d)?;
                    let values: Vec<f64> =
                        basis.chunks(q).map(|row| dot(row, &fit.coeffs)).collect();
                    let r = gof_from_values(&fit, &values, cfg.alpha, noise)?;
                    Ok(PowerRecord {
                        scale: s,
                        rep,
                        z_n: r.z_n,
                        pilot_z_n: r.pilot_z_n,
                        reject: r.reject,
                        signal_norm_n: (signal.iter().map(|v| v * v).sum::<f64>() / n as f64)
                            .sqrt(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<PowerRecord> = nested.into_iter().flatten().collect();
    let crit = splinenet::inference::normal_quantile(1.0 - cfg.alpha / 2.0);
    let points = cfg
        .scales
        .iter()
        .map(|&s| {
            let rs: Vec<&PowerRecord> = records.iter().filter(|r| r.scale == s).collect();
            let k = rs.len() as f64;
            PowerPoint {
                scale: s,
                power: rs.iter().filter(|r| r.reject).count() as f64 / k,
                power_pilot: rs.iter().filter(|r| r.pilot_z_n.abs() >= crit).count() as f64 / k,
                normalized_signal: rs.iter().map(|r| r.signal_norm_n).sum::<f64>() / k / sep,
            }
        })
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        body: ReportBody::Power(PowerReport {
            n,
            knots,
            q,
            m,
            separation: sep,
            points,
            records,
        }),
        warnings,
        metadata: Metadata::since(start),
    })
}

// ---------------------------------------------------------------- diagnostics

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenRow {
    #[serde(rename = "M")]
    pub knots: usize,
    pub n: usize,
    /// Extreme eigenvalues of `n⁻¹ΦᵀΦ` divided by `h^d`.
    pub lambda_min_scaled: f64,
    pub lambda_max_scaled: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormEquivRow {
    pub n: usize,
    /// Largest `|‖g‖_n²/‖g‖²_{L²(Q)} - 1|` over the random draws.
    pub max_ratio_draws: f64,
    /// The same supremum over the whole spline space.
    pub sup_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoeffRow {
    #[serde(rename = "M")]
    pub knots: usize,
    pub n: usize,
    /// `ĈᵀĈ·h^d`.
    pub scaled_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagReport {
    pub k: usize,
    pub d: usize,
    pub eigen: Vec<EigenRow>,
    /// Smallest `w` with every scaled eigenvalue in `[1/w, w]`.
    pub window: f64,
    #[serde(rename = "norm_equiv_M")]
    pub norm_equiv_knots: usize,
    pub norm_equiv: Vec<NormEquivRow>,
    /// Share of draws whose ratio shrank from the smaller to the larger `n`.
    pub fraction_decreased: f64,
    pub coefficients: Vec<CoeffRow>,
    /// `max |∫B_{i,2}² - 2h/3|` over interior hats, when `k = 2`.
    pub hat_gram_error: Option<f64>,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Golub–Welsch).
pub fn gauss_legendre(p: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::from_fn(p, p, |i, j| {
        if i + 1 == j || j + 1 == i {
            let r = i.max(j) as f64;
            r / (4.0 * r * r - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..p)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Exact `∫ B_i B_j dQ` on `[0,1]` for a product-linear density.
pub fn l2_gram_1d(grid: &KnotGrid, density: &Density) -> Result<DMatrix<f64>> {
    let nb = grid.basis_len();
    let (nodes, wts) = gauss_legendre(grid.order() + 1);
    let mut g = DMatrix::zeros(nb, nb);
    let h = 1.0 / grid.interior_count() as f64;
    for cell in 0..grid.interior_count() {
        let (a, b) = (cell as f64 * h, (cell + 1) as f64 * h);
        for (t, w) in nodes.iter().zip(&wts) {
            let x = 0.5 * (a + b) + 0.5 * (b - a) * t;
            let weight = 0.5 * (b - a) * w * density.eval(&[x]);
            let (start, vals) = grid.local_basis(x)?;
            for (r, vr) in vals.iter().enumerate() {
                for (c, vc) in vals.iter().enumerate() {
                    g[(start + r, start + c)] += weight * vr * vc;
                }
            }
        }
    }
    Ok(g)
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |r, c| {
        a[(r / b.nrows(), c / b.ncols())] * b[(r % b.nrows(), c % b.ncols())]
    })
}

/// `∫ D_𝐢 D_𝐣 dQ` over `[0,1]^d` in tensor index order.
pub fn l2_gram(grid: &KnotGrid, d: usize, density: &Density) -> Result<DMatrix<f64>> {
    let g1 = l2_gram_1d(grid, density)?;
    let mut g = g1.clone();
    for _ in 1..d {
        g = kron(&g, &g1);
    }
    Ok(g)
}

pub fn run_diagnostics(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    if matches!(cfg.density, Density::Tilted { .. }) && cfg.d > 1 {
        warnings.push("the tensor Gram matrix assumes a product density".into());
    }
    let d = cfg.d;
    let mut eigen = Vec::new();
    let mut coefficients = Vec::new();
    let mut hat_err: Option<f64> = None;
    for &knots in &cfg.diag_knots {
        let grid = KnotGrid::cardinal(knots, cfg.k)?;
        let q = TensorIndexSet::new(&grid, d)?.len();
        let n = 50 * q;
        let h = 1.0 / knots as f64;
        let data = gen_data(cfg, n, 0)?;
        let phi = design_matrix(&data, &grid, d)?;
        let gram = phi.tr_mul(&phi) / n as f64;
        let ev = gram.symmetric_eigenvalues();
        let hd = h.powi(d as i32);
        eigen.push(EigenRow {
            knots,
            n,
            lambda_min_scaled: ev.min() / hd,
            lambda_max_scaled: ev.max() / hd,
        });
        let fit = fit_pilot(&data, &grid, d)?;
        coefficients.push(CoeffRow {
            knots,
            n,
            scaled_norm: fit.coeff_norm2() * hd,
        });
        if cfg.k == 2 && matches!(cfg.density, Density::Uniform) {
            let g = l2_gram_1d(&grid, &Density::Uniform)?;
            let worst = (1..g.nrows() - 1)
                .map(|i| (g[(i, i)] - 2.0 * h / 3.0).abs())
                .fold(0.0, f64::max);
            hat_err = Some(hat_err.map_or(worst, |e| e.max(worst)));
        }
    }
    let window = eigen
        .iter()
        .map(|e| e.lambda_max_scaled.max(1.0 / e.lambda_min_scaled))
        .fold(1.0, f64::max);

    let knots = cfg.diag_knots[cfg.diag_knots.len() / 2];
    let grid = KnotGrid::cardinal(knots, cfg.k)?;
    let q = TensorIndexSet::new(&grid, d)?.len();
    let l2 = l2_gram(&grid, d, &cfg.density)?;
    let chol = Cholesky::new(l2.clone())
        .ok_or_else(|| SimError::Config("L² Gram matrix is not positive definite".into()))?;
    let draws: Vec<DVector<f64>> = (0..cfg.diag_draws)
        .map(|r| {
            let mut rng = stream(cfg.seed, 0, r);
            DVector::from_fn(q, |_, _| StandardNormal.sample(&mut rng))
        })
        .collect();
    let mut norm_equiv = Vec::new();
    let mut per_draw: Vec<Vec<f64>> = Vec::new();
    for factor in [10, 100] {
        let n = factor * q;
        let data = gen_data(cfg, n, 1)?;
        let phi = design_matrix(&data, &grid, d)?;
        let emp = phi.tr_mul(&phi) / n as f64;
        let ratios: Vec<f64> = draws
            .iter()
            .map(|c| (c.dot(&(&emp * c)) / c.dot(&(&l2 * c)) - 1.0).abs())
            .collect();
        // Whitened empirical Gram: eigenvalues are the extreme norm ratios.
        let linv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(q, q))
            .ok_or_else(|| SimError::Config("singular Cholesky factor".into()))?;
        let white = &linv * &emp * linv.transpose();
        let ev = SymmetricEigen::new(0.5 * (&white + white.transpose())).eigenvalues;
        let sup_ratio = ev.iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max);
        norm_equiv.push(NormEquivRow {
            n,
            max_ratio_draws: ratios.iter().copied().fold(0.0, f64::max),
            sup_ratio,
        });
        per_draw.push(ratios);
    }
    let decreased = per_draw[0]
        .iter()
        .zip(&per_draw[1])
        .filter(|(a, b)| b < a)
        .count();
    let body = DiagReport {
        k: cfg.k,
        d,
        eigen,
        window,
        norm_equiv_knots: knots,
        norm_equiv,
        fraction_decreased: decreased as f64 / cfg.diag_draws.max(1) as f64,
        coefficients,
        hat_gram_error: hat_err,
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        body: ReportBody::Diagnostics(body),
        warnings,
        metadata: Metadata::since(start),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(4);
        for p in 0..8 {
            let got: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(p)).sum();
            let want = if p % 2 == 1 {
                0.0
            } else {
                2.0 / (p as f64 + 1.0)
            };
            assert!((got - want).abs() < 1e-13, "degree {p}");
        }
    }

    #[test]
    fn cached_network_matches_assembled_network() {
        let grid = KnotGrid::cardinal(5, 3).unwrap();
        let dnet = build_tilde_d(&grid, 2, 6).unwrap();
        let eval = EvalGrid::uniform(2, 9, &Density::Uniform);
        let cache = BasisCache::new(&grid, &dnet, &eval.points, 2).unwrap();
        let coeffs: Vec<f64> = (0..cache.q).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let net = splinenet::constructor::assemble_fnet(&coeffs, &dnet).unwrap();
        let direct = net.evaluate_flat(&eval.points).unwrap();
        assert!(max_abs_diff(&direct, &cache.network(&coeffs)) < 1e-12);
        let exact: Vec<f64> = eval
            .points
            .chunks(2)
            .map(|p| {
                let v = splinenet::splines::eval_tensor_vector(&grid, 2, p).unwrap();
                dot(&v, &coeffs)
            })
            .collect();
        assert!(max_abs_diff(&exact, &cache.pilot(&coeffs)) < 1e-12);
    }

    #[test]
    fn hat_gram_entries() {
        let g = KnotGrid::cardinal(5, 2).unwrap();
        let gram = l2_gram_1d(&g, &Density::Uniform).unwrap();
        let h = 0.2;
        assert!((gram[(2, 2)] - 2.0 * h / 3.0).abs() < 1e-15);
        assert!((gram[(2, 3)] - h / 6.0).abs() < 1e-15);
        assert!((gram[(0, 0)] - h / 3.0).abs() < 1e-15);
        assert!((gram.sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eval_grid_weights_integrate_density() {
        for d in [1, 2] {
            let g = EvalGrid::standard(d, &Density::Tilted { a: 0.5 });
            assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let g = EvalGrid::uniform(d, 11, &Density::Uniform);
            assert_eq!(g.len(), 11usize.pow(d as u32));
        }
    }
}
