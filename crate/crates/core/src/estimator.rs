//! Least-squares spline estimators and their network versions.
//!
//! [`fit_pilot`] regresses the response on the tensor B-spline basis
//! `𝐃_k`; [`fit_additive`] regresses on the truncated power basis
//! `(1, 𝐏_{k_1,1}(x_1), …, 𝐏_{k_d,d}(x_d))` and centres every component so
//! that it integrates to zero over `[0, 1]`.
//!
//! Both solves use an orthogonal factorisation of the design matrix. The Gram
//! matrix `ΦᵀΦ` is formed only for the variance formulas in
//! [`crate::inference`].

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::constructor::{
    assemble_fnet, build_tilde_b_vector, build_tilde_d, tilde_b_bound, CertifiedNet,
};
use crate::error::{Error, Result};
use crate::relunet::{pad_depth, parallel, ReluNetwork};
use crate::splines::{tensor_nonzeros, KnotGrid, TensorIndexSet, TruncatedPowerBasis};

/// Relative size of an `R` diagonal entry below which a column is treated as
/// linearly dependent on the previous ones.
const RANK_TOL: f64 = 1e-10;

/// Observations `(𝐗_i, Y_i)` with `𝐗_i ∈ [0,1]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    /// `x` is row-major `n × dim`.
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("predictor dimension must be positive"));
        }
        if y.is_empty() {
            return Err(Error::domain(
                "dataset must contain at least one observation",
            ));
        }
        if x.len() != dim * y.len() {
            return Err(Error::domain(format!(
                "{} predictor values do not form {} rows of dimension {dim}",
                x.len(),
                y.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain(format!(
                "predictor {} of observation {} is {}, outside [0, 1]",
                pos % dim + 1,
                pos / dim,
                x[pos]
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("response {pos} is not finite")));
        }
        Ok(Dataset { dim, x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::domain("predictor rows have different lengths"));
        }
        Self::new(dim, rows.concat(), y)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major predictors.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Same design with new responses.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.x.clone(), y)
    }
}

/// How a pilot fit was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    /// Full-rank least squares with `n > q`.
    Certified,
    /// `n ≤ q`; minimum-norm solution, not covered by the inference results.
    Underdetermined,
    /// Ridge-regularised exploration fit.
    Ridge,
}

/// Solver options for [`fit_pilot_with`].
#[derive(Clone, Copy, Debug, Default)]
pub struct FitOptions {
    /// Adds `λI` to the Gram matrix instead of failing on singular designs.
    pub ridge: Option<f64>,
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nc = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nc) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]))
    }
}

/// Least-squares coefficients `Ĉ` over the tensor basis.
#[derive(Debug, Serialize, Deserialize)]
pub struct PilotFit {
    pub grid: KnotGrid,
    pub d: usize,
    pub n: usize,
    pub coeffs: Vec<f64>,
    #[serde(with = "rows")]
    pub gram: DMatrix<f64>,
    pub rss: f64,
    /// `rss / (n - q)`, absent when `n ≤ q`.
    pub tau2: Option<f64>,
    pub status: FitStatus,
    /// `f̂_pilot(𝐗_i)` at the design points.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fitted: Vec<f64>,
    #[serde(skip)]
    chol: OnceLock<Option<Cholesky<f64, Dyn>>>,
}

impl Clone for PilotFit {
    fn clone(&self) -> Self {
        PilotFit {
            grid: self.grid.clone(),
            d: self.d,
            n: self.n,
            coeffs: self.coeffs.clone(),
            gram: self.gram.clone(),
            rss: self.rss,
            tau2: self.tau2,
            status: self.status,
            fitted: self.fitted.clone(),
            chol: OnceLock::new(),
        }
    }
}

impl PilotFit {
    /// `q = (M + k - 1)^d`.
    pub fn q(&self) -> usize {
        self.coeffs.len()
    }

    /// Cholesky factor of `ΦᵀΦ`, `None` when the matrix is not positive definite.
    pub fn gram_cholesky(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.chol
            .get_or_init(|| Cholesky::new(self.gram.clone()))
            .as_ref()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::domain(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.d
            )));
        }
        Ok(tensor_nonzeros(&self.grid, x)?
            .iter()
            .map(|&(p, v)| self.coeffs[p] * v)
            .sum())
    }

    /// `Ĉᵀ Ĉ`.
    pub fn coeff_norm2(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let fit: PilotFit = serde_json::from_str(s)?;
        let q = TensorIndexSet::new(&fit.grid, fit.d)?.len();
        if fit.coeffs.len() != q || fit.gram.nrows() != q || fit.gram.ncols() != q {
            return Err(Error::domain(format!(
                "fit dimensions do not match q = {q}"
            )));
        }
        Ok(fit)
    }
}

/// Dense design matrix `Φ` with rows `𝐃_k(𝐗_i)ᵀ`.
pub fn design_matrix(data: &Dataset, grid: &KnotGrid, d: usize) -> Result<DMatrix<f64>> {
    let set = TensorIndexSet::new(grid, d)?;
    if data.dim() != d {
        return Err(Error::domain(format!(
            "dataset has dimension {}, fit expects {d}",
            data.dim()
        )));
    }
    let mut phi = DMatrix::zeros(data.n(), set.len());
    for i in 0..data.n() {
        for (p, v) in tensor_nonzeros(grid, data.point(i))? {
            phi[(i, p)] = v;
        }
    }
    Ok(phi)
}

/// Columns that are zero or numerically dependent, judged from a QR factor.
fn dependent_columns(phi: &DMatrix<f64>, r: &DMatrix<f64>) -> Vec<usize> {
    let scale = (0..r.ncols()).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    (0..phi.ncols())
        .filter(|&j| {
            let norm = phi.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * scale.max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Least squares via Householder QR: returns `(coefficients, R)`.
fn qr_solve(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, Vec<usize>)> {
    let qr = phi.clone().qr();
    let r = qr.r();
    let bad = dependent_columns(phi, &r);
    if !bad.is_empty() {
        return Ok((DVector::zeros(phi.ncols()), r, bad));
    }
    let qty = qr.q().tr_mul(y);
    let c = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok((c, r, bad))
}

pub fn fit_pilot(data: &Dataset, grid: &KnotGrid, d: usize) -> Result<PilotFit> {
    fit_pilot_with(data, grid, d, FitOptions::default())
}

pub fn fit_pilot_with(
    data: &Dataset,
    grid: &KnotGrid,
    d: usize,
    opts: FitOptions,
) -> Result<PilotFit> {
    let set = TensorIndexSet::new(grid, d)?;
    let phi = design_matrix(data, grid, d)?;
    let y = DVector::from_column_slice(data.y());
    let n = data.n();
    let q = set.len();
    let gram = phi.tr_mul(&phi);
    let (coeffs, status) = if let Some(lambda) = opts.ridge {
        let mut g = gram.clone();
        for j in 0..q {
            g[(j, j)] += lambda;
        }
        let chol = Cholesky::new(g)
            .ok_or_else(|| Error::Numerical("ridge system is not positive definite".into()))?;
        (chol.solve(&phi.tr_mul(&y)), FitStatus::Ridge)
    } else if n <= q {
        let svd = phi.clone().svd(true, true);
        let c = svd
            .solve(&y, 1e-12 * svd.singular_values.max())
            .map_err(|e| Error::Numerical(e.to_string()))?;
        (c, FitStatus::Underdetermined)
    } else {
        let (c, _, bad) = qr_solve(&phi, &y)?;
        if !bad.is_empty() {
            return Err(Error::SingularDesign {
                indices: bad.into_iter().map(|p| set.index_at(p)).collect(),
            });
        }
        (c, FitStatus::Certified)
    };
    let fitted = &phi * &coeffs;
    let rss = (&y - &fitted).norm_squared();
    let tau2 = (n > q).then(|| rss / (n - q) as f64);
    Ok(PilotFit {
        grid: grid.clone(),
        d,
        n,
        coeffs: coeffs.iter().copied().collect(),
        gram,
        rss,
        tau2,
        status,
        fitted: fitted.iter().copied().collect(),
        chol: OnceLock::new(),
    })
}

pub fn predict_pilot(fit: &PilotFit, x: &[f64]) -> Result<f64> {
    fit.predict(x)
}

/// `√(ĈᵀĈ)·√q·bound(𝐃̃)`, the sup-norm gap between the pilot and its network.
pub fn pilot_network_gap(fit: &PilotFit, dnet: &CertifiedNet) -> f64 {
    fit.coeff_norm2().sqrt() * (fit.q() as f64).sqrt() * dnet.bound
}

/// `f̂_net = Σ_𝐢 b̂_𝐢 D̃_{𝐢,k}` for a freshly built `𝐃̃_k`.
pub fn pilot_to_network(fit: &PilotFit, m: usize) -> Result<ReluNetwork> {
    let dnet = build_tilde_d(&fit.grid, fit.d, m)?;
    assemble_fnet(&fit.coeffs, &dnet)
}

/// Additive fit `α̂ + Σ_j ĝ_j(x_j)` with centred components.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdditiveFit {
    pub basis: TruncatedPowerBasis,
    /// Raw intercept `â` of the truncated power regression.
    pub raw_intercept: f64,
    /// `α̂ = â + Σ_j ∫f̂_j`.
    pub alpha: f64,
    /// Coefficients `Ŵ_j` of each truncated power block.
    pub blocks: Vec<Vec<f64>>,
    /// `∫_0^1 f̂_j`.
    pub integrals: Vec<f64>,
    /// `ĝ_j` re-expressed as `Ĉ_jᵀ𝐁_{k_j}` on the coordinate's grid.
    pub bspline_coeffs: Vec<Vec<f64>>,
    /// Collocation residual of each re-expression.
    pub conversion_residuals: Vec<f64>,
    pub rss: f64,
    pub n: usize,
}

impl AdditiveFit {
    /// `f̂_j(x) = Ŵ_jᵀ𝐏_{k_j,j}(x)` before centring.
    pub fn raw_component(&self, j: usize, x: f64) -> Result<f64> {
        let p = self.basis.eval_block(j, x)?;
        Ok(p.iter().zip(&self.blocks[j]).map(|(a, b)| a * b).sum())
    }

    /// `ĝ_j(x) = f̂_j(x) - ∫f̂_j`.
    pub fn component(&self, j: usize, x: f64) -> Result<f64> {
        Ok(self.raw_component(j, x)? - self.integrals[j])
    }

    /// `ĝ_j` through its B-spline coefficients.
    pub fn component_bspline(&self, j: usize, x: f64) -> Result<f64> {
        let (start, vals) = self.basis.grid(j).local_basis(x)?;
        Ok(vals
            .iter()
            .enumerate()
            .map(|(r, v)| v * self.bspline_coeffs[j][start + r])
            .sum())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.basis.dim() {
            return Err(Error::domain(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.basis.dim()
            )));
        }
        let mut acc = self.alpha;
        for (j, &xj) in x.iter().enumerate() {
            acc += self.component(j, xj)?;
        }
        Ok(acc)
    }

    /// `Σ_j ‖Ĉ_j‖₂ √(M_j+k_j-1) Δ_{k_j}` for networks of precision `m`.
    pub fn network_gap(&self, m: usize) -> f64 {
        self.bspline_coeffs
            .iter()
            .zip(self.basis.grids())
            .map(|(c, g)| {
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                norm * (g.basis_len() as f64).sqrt() * tilde_b_bound(m, g.order())
            })
            .sum()
    }
}

/// Chebyshev-spaced collocation nodes `(1 - cos(π(r+½)/N))/2` on `[0, 1]`.
fn chebyshev_nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|r| 0.5 * (1.0 - (std::f64::consts::PI * (r as f64 + 0.5) / n as f64).cos()))
        .collect()
}

pub fn fit_additive(data: &Dataset, basis: &TruncatedPowerBasis) -> Result<AdditiveFit> {
    let d = basis.dim();
    if data.dim() != d {
        return Err(Error::domain(format!(
            "dataset has dimension {}, basis expects {d}",
            data.dim()
        )));
    }
    let n = data.n();
    let qp = basis.len();
    if n <= qp {
        return Err(Error::InvalidRegime(format!(
            "additive fit needs n > q_+ = {qp}, got n = {n}"
        )));
    }
    let mut design = DMatrix::zeros(n, qp);
    for i in 0..n {
        for (c, v) in basis.eval(data.point(i))?.into_iter().enumerate() {
            design[(i, c)] = v;
        }
    }
    let y = DVector::from_column_slice(data.y());
    let (w, _, bad) = qr_solve(&design, &y)?;
    if !bad.is_empty() {
        let indices = bad
            .into_iter()
            .map(|c| {
                if c == 0 {
                    return vec![-1, 0];
                }
                let j = (0..d)
                    .rev()
                    .find(|&j| basis.block_offset(j) <= c)
                    .unwrap_or(0);
                vec![j as isize, (c - basis.block_offset(j)) as isize]
            })
            .collect();
        return Err(Error::SingularDesign { indices });
    }
    let rss = (&y - &design * &w).norm_squared();
    let raw_intercept = w[0];
    let mut blocks = Vec::with_capacity(d);
    let mut integrals = Vec::with_capacity(d);
    for j in 0..d {
        let off = basis.block_offset(j);
        let b: Vec<f64> = w.rows(off, basis.block_len(j)).iter().copied().collect();
        let ints = basis.block_integrals(j);
        integrals.push(b.iter().zip(&ints).map(|(a, c)| a * c).sum::<f64>());
        blocks.push(b);
    }
    let alpha = raw_intercept + integrals.iter().sum::<f64>();
    let mut fit = AdditiveFit {
        basis: basis.clone(),
        raw_intercept,
        alpha,
        blocks,
        integrals,
        bspline_coeffs: Vec::new(),
        conversion_residuals: Vec::new(),
        rss,
        n,
    };
    for j in 0..d {
        let (c, res) = to_bspline(&fit, j)?;
        fit.bspline_coeffs.push(c);
        fit.conversion_residuals.push(res);
    }
    Ok(fit)
}

/// Re-expresses `ĝ_j` in the B-spline basis of the same grid by collocation
/// least squares on `10(M_j + k_j)` Chebyshev nodes.
fn to_bspline(fit: &AdditiveFit, j: usize) -> Result<(Vec<f64>, f64)> {
    let grid = fit.basis.grid(j);
    let nodes = chebyshev_nodes(10 * (grid.interior_count() + grid.order()));
    let mut a = DMatrix::zeros(nodes.len(), grid.basis_len());
    let mut target = DVector::zeros(nodes.len());
    for (r, &x) in nodes.iter().enumerate() {
        let (start, vals) = grid.local_basis(x)?;
        for (c, v) in vals.into_iter().enumerate() {
            a[(r, start + c)] = v;
        }
        target[r] = fit.component(j, x)?;
    }
    let (c, _, bad) = qr_solve(&a, &target)?;
    if !bad.is_empty() {
        return Err(Error::Numerical(
            "collocation matrix is rank deficient".into(),
        ));
    }
    let residual = (&a * &c - &target).amax();
    let tolerance = 1e-8 * target.amax().max(1.0);
    if residual > tolerance {
        return Err(Error::Conversion {
            residual,
            tolerance,
        });
    }
    Ok((c.iter().copied().collect(), residual))
}

/// `α̂ + Σ_j Ĉ_jᵀ𝐁̃_{k_j}(x_j)` from prebuilt per-coordinate `𝐁̃` networks.
pub fn additive_network_from(fit: &AdditiveFit, tilde_b: &[&CertifiedNet]) -> Result<ReluNetwork> {
    let d = fit.basis.dim();
    if tilde_b.len() != d {
        return Err(Error::domain(format!(
            "need {d} coordinate networks, got {}",
            tilde_b.len()
        )));
    }
    let depth = tilde_b.iter().map(|c| c.net.depth()).max().unwrap_or(0);
    let padded = tilde_b
        .iter()
        .map(|c| pad_depth(&c.net, depth))
        .collect::<Result<Vec<_>>>()?;
    let joint = parallel(&padded, false)?;
    let row: Vec<f64> = fit.bspline_coeffs.concat();
    if row.len() != joint.output_dim() {
        return Err(Error::domain(
            "coordinate networks do not match the fitted grids",
        ));
    }
    joint
        .map_output(&DMatrix::from_row_slice(1, row.len(), &row))?
        .with_output_bias(&[fit.alpha])
}

pub fn additive_to_network(fit: &AdditiveFit, m: usize) -> Result<ReluNetwork> {
    let nets = fit
        .basis
        .grids()
        .iter()
        .map(|g| build_tilde_b_vector(g, m))
        .collect::<Result<Vec<_>>>()?;
    additive_network_from(fit, &nets.iter().collect::<Vec<_>>())
}
