//! Dense-grid certification of the constructions in [`crate::constructor`].
//!
//! A certificate records the largest absolute deviation found on a scan grid
//! and whether every output stayed inside the certified range. The grids are
//! uniform (`10⁴+1` points in one dimension, `201²` in two, `51³` in three)
//! and are augmented with the knots, the knot midpoints and, for moderate
//! `m`, every multiple of `2^{-m-1}`, where the square approximation attains
//! its worst error.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::constructor::{
    build_prod2, build_prod_s, build_sq, build_tilde_b_vector, build_tilde_d, CertifiedNet,
};
use crate::error::{Error, Result};
use crate::splines::{eval_tensor_vector, KnotGrid};

/// Rounding slack for the range check. Exact signed cancellations such as
/// `c₁K_i + c₂K_{i+1} + c₃K_{i+2}` outside the support leave residues of a
/// few ulps. The error bound itself is checked without slack.
pub const RANGE_TOL: f64 = 1e-12;

/// Dyadic refinement is added to 1-D scans only while it stays this small.
const MAX_DYADIC_LEVEL: usize = 14;

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub target: String,
    pub m: usize,
    pub k: Option<usize>,
    pub d: usize,
    #[serde(rename = "M")]
    pub interior_count: Option<usize>,
    pub analytic_bound: f64,
    pub scan_max_error: f64,
    pub grid_points: usize,
    pub depth: usize,
    pub max_width: usize,
    /// Every scanned output lay in `[range_lo, range_hi]` up to [`RANGE_TOL`].
    pub range_ok: bool,
    pub pass: bool,
    /// Depth and width ceilings of the construction and whether they hold.
    pub depth_limit: Option<usize>,
    pub width_limit: Option<usize>,
    pub architecture_ok: Option<bool>,
    /// Alternative layer counts quoted for the tensor network, keyed by formula.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_variants: Option<BTreeMap<String, usize>>,
}

fn uniform(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
}

fn knots_and_midpoints(grid: Option<&KnotGrid>) -> Vec<f64> {
    let Some(g) = grid else { return Vec::new() };
    let inside: Vec<f64> = g
        .knots()
        .iter()
        .copied()
        .filter(|t| (0.0..=1.0).contains(t))
        .collect();
    let mids = inside.windows(2).map(|w| 0.5 * (w[0] + w[1]));
    inside.iter().copied().chain(mids).collect()
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// One-dimensional scan points for precision `m`.
pub fn scan_points_1d(m: usize, grid: Option<&KnotGrid>) -> Vec<f64> {
    let mut pts = uniform(10_001);
    pts.extend(knots_and_midpoints(grid));
    if m < MAX_DYADIC_LEVEL {
        let n = 1usize << (m + 1);
        pts.extend((0..=n).map(|j| j as f64 / n as f64));
    }
    sorted_unique(pts)
}

/// Scan points on `[0,1]^d` (`d ≤ 3`), flattened row-major.
pub fn scan_points(d: usize, m: usize, grid: Option<&KnotGrid>) -> Result<Vec<f64>> {
    let axis = match d {
        1 => return Ok(scan_points_1d(m, grid)),
        2 => uniform(201),
        3 => uniform(51),
        _ => {
            return Err(Error::domain(format!(
                "scan grids are defined for d ≤ 3, got {d}"
            )))
        }
    };
    let mut pts = Vec::new();
    push_product(&axis, d, &mut pts);
    let extra = knots_and_midpoints(grid);
    if !extra.is_empty() {
        push_product(&extra, d, &mut pts);
    }
    Ok(pts)
}

fn push_product(axis: &[f64], d: usize, out: &mut Vec<f64>) {
    let n = axis.len();
    let total = n.pow(d as u32);
    for mut idx in 0..total {
        let mut point = vec![0.0; d];
        for slot in point.iter_mut().rev() {
            *slot = axis[idx % n];
            idx /= n;
        }
        out.extend(point);
    }
}

struct Scan {
    max_error: f64,
    range_ok: bool,
    points: usize,
}

/// Compares every output of `cnet` with `oracle(point, out_index)`.
fn scan<F>(cnet: &CertifiedNet, pts: &[f64], mut oracle: F) -> Result<Scan>
where
    F: FnMut(&[f64], &mut Vec<f64>) -> Result<()>,
{
    let d = cnet.net.input_dim();
    let q = cnet.net.output_dim();
    let out = cnet.net.evaluate_flat(pts)?;
    let mut want = Vec::with_capacity(q);
    let mut max_error = 0.0f64;
    let mut range_ok = true;
    for (x, got) in pts.chunks(d).zip(out.chunks(q)) {
        want.clear();
        oracle(x, &mut want)?;
        for (&g, &w) in got.iter().zip(&want) {
            let e = (g - w).abs();
            if !(e <= max_error) {
                max_error = if e.is_nan() { f64::INFINITY } else { e };
            }
            range_ok &= g >= cnet.range_lo - RANGE_TOL && g <= cnet.range_hi + RANGE_TOL;
        }
    }
    Ok(Scan {
        max_error,
        range_ok,
        points: pts.len() / d,
    })
}

fn certificate(
    cnet: &CertifiedNet,
    s: Scan,
    d: usize,
    k: Option<usize>,
    grid: Option<&KnotGrid>,
) -> Certificate {
    let arch = cnet.net.architecture();
    Certificate {
        target: cnet.target.to_string(),
        m: cnet.m,
        k,
        d,
        interior_count: grid.map(KnotGrid::interior_count),
        analytic_bound: cnet.bound,
        scan_max_error: s.max_error,
        grid_points: s.points,
        depth: arch.depth,
        max_width: arch.max_width,
        range_ok: s.range_ok,
        pass: s.range_ok && s.max_error <= cnet.bound,
        depth_limit: None,
        width_limit: None,
        architecture_ok: None,
        depth_variants: None,
    }
}

fn with_limits(mut c: Certificate, depth: usize, width: usize) -> Certificate {
    c.depth_limit = Some(depth);
    c.width_limit = Some(width);
    c.architecture_ok = Some(c.depth <= depth && c.max_width <= width);
    c
}

pub fn certify_sq(m: usize) -> Result<Certificate> {
    let c = build_sq(m)?;
    let pts = scan_points_1d(m, None);
    let s = scan(&c, &pts, |x, w| {
        w.push(x[0] * x[0]);
        Ok(())
    })?;
    Ok(with_limits(certificate(&c, s, 1, None, None), 2 * m, 4))
}

/// `×_s` for `s ∈ {2, 3}` on the 2-D or 3-D scan grid.
pub fn certify_prod(m: usize, s: usize) -> Result<Certificate> {
    let c = if s == 2 {
        build_prod2(m)?
    } else {
        build_prod_s(m, s)?
    };
    let pts = scan_points(s, m, None)?;
    let sc = scan(&c, &pts, |x, w| {
        w.push(x.iter().product());
        Ok(())
    })?;
    let (depth, width) = if s == 2 {
        (2 * m + 2, 12)
    } else {
        ((s - 1) * (2 * m + 3) - 1, 10 + s)
    };
    Ok(with_limits(
        certificate(&c, sc, s, None, None),
        depth,
        width,
    ))
}

pub fn certify_tilde_b(grid: &KnotGrid, m: usize) -> Result<Certificate> {
    let c = build_tilde_b_vector(grid, m)?;
    let pts = scan_points_1d(m, Some(grid));
    let s = scan(&c, &pts, |x, w| {
        w.extend(grid.eval_basis_vector(x[0])?);
        Ok(())
    })?;
    let k = grid.order();
    let cert = certificate(&c, s, 1, Some(k), Some(grid));
    Ok(with_limits(
        cert,
        k * (2 * m + 3),
        3 * (grid.interior_count() + 2 * k),
    ))
}

/// Layer counts `(2m+3)(k+d-1)+1`, `(2m+3)(k+d-3)+k` and `(2m+3)(k+d-3)+k-1`
/// that appear as alternatives to the constructive `(2m+3)(k+d-1)` ceiling.
pub fn depth_variants(m: usize, k: usize, d: usize) -> BTreeMap<String, usize> {
    let unit = 2 * m + 3;
    let base = k + d;
    let mut v = BTreeMap::new();
    v.insert("(2m+3)(k+d-1)+1".to_string(), unit * (base - 1) + 1);
    v.insert(
        "(2m+3)(k+d-3)+k".to_string(),
        unit * base.saturating_sub(3) + k,
    );
    v.insert(
        "(2m+3)(k+d-3)+k-1".to_string(),
        unit * base.saturating_sub(3) + k - 1,
    );
    v
}

pub fn certify_tilde_d(grid: &KnotGrid, d: usize, m: usize) -> Result<Certificate> {
    let c = build_tilde_d(grid, d, m)?;
    let pts = scan_points(d, m, Some(grid))?;
    let s = scan(&c, &pts, |x, w| {
        w.extend(eval_tensor_vector(grid, d, x)?);
        Ok(())
    })?;
    let k = grid.order();
    let width = 3 * (grid.interior_count() + 2 * k).pow(d as u32);
    let mut cert = with_limits(
        certificate(&c, s, d, Some(k), Some(grid)),
        (2 * m + 3) * (k + d - 1),
        width,
    );
    cert.depth_variants = Some(depth_variants(m, k, d));
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_grids_have_expected_sizes() {
        assert!(scan_points_1d(3, None).len() >= 10_001);
        let g = KnotGrid::cardinal(4, 2).unwrap();
        let p2 = scan_points(2, 3, Some(&g)).unwrap();
        assert_eq!(p2.len(), 2 * (201 * 201 + 81));
        assert_eq!(scan_points(3, 3, None).unwrap().len(), 3 * 51 * 51 * 51);
        assert!(scan_points(4, 3, None).is_err());
        let p = scan_points_1d(12, None);
        assert!(p.binary_search_by(|v| v.total_cmp(&(1.0 / 8192.0))).is_ok());
    }

    #[test]
    fn sq_certificate_hits_bound_exactly() {
        let c = certify_sq(2).unwrap();
        assert!(c.pass);
        assert_eq!(c.scan_max_error, c.analytic_bound);
        assert_eq!(c.architecture_ok, Some(true));
    }

    #[test]
    fn order_two_certificate_is_exact() {
        let g = KnotGrid::cardinal(4, 2).unwrap();
        let c = certify_tilde_b(&g, 6).unwrap();
        assert!(c.pass);
        assert!(c.scan_max_error <= 1e-12);
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["M"], 4);
        assert_eq!(json["target"], "bspline_vector(2)");
    }

    #[test]
    fn depth_variant_values() {
        let v = depth_variants(2, 3, 2);
        assert_eq!(v["(2m+3)(k+d-1)+1"], 29);
        assert_eq!(v["(2m+3)(k+d-3)+k"], 17);
        assert_eq!(v["(2m+3)(k+d-3)+k-1"], 16);
    }
}
