//! Explicit ReLU constructions with analytic sup-norm error bounds.
//!
//! | builder | approximates | depth | bound |
//! |---|---|---|---|
//! | [`build_teeth`] | sawtooth `g_s` (exact) | `s` | 0 |
//! | [`build_sq`] | `x²` on `[0,1]` | `2m` | `2^{-2m-2}` |
//! | [`build_prod2`] | `xy` on `[0,1]²` | `2m+2` | `4^{-m+1}` |
//! | [`build_prod_s`] | `x₁⋯x_s` | `(s-1)(2m+3)-1` | `(s-1)4^{-m+1}` |
//! | [`build_tilde_b`] | `𝐁_k(x)` | `1+(k-2)(2m+2)` | `(8^k/14)4^{-m}` |
//! | [`build_tilde_d`] | `𝐃_k(𝐱)` | `1+(k+d-3)(2m+2)` | `[4(d-1)+8^k]4^{-m}` |
//!
//! All outputs of the square-based constructions lie in `[0, 1]`.
//!
//! The B-spline networks evaluate the order-`(s+1)` basis from the order-`s`
//! basis through products `ã_{i,s}·B̃_{i,s}` and `b̃_{i,s}·B̃_{i+1,s}`, followed
//! by a normalisation that keeps every output in `[0, 1]`. The normalising
//! constants use the analytic bound `Δ_s = (8^s/14)4^{-m}` in place of the
//! realised error so that each network depends only on `(m, k, grid)`. Squares
//! of a value feeding several products are computed once.

mod circuit;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::relunet::{compose, pad_depth, parallel, Layer, ReluNetwork};
use crate::splines::{KnotGrid, TensorIndexSet};
use circuit::{shared_products, sq_stage, Circuit, Lin};

/// Largest supported precision parameter.
pub const MAX_M: usize = 20;

/// What a certified network approximates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Teeth {
        s: usize,
    },
    Square,
    Product {
        s: usize,
    },
    /// One univariate B-spline `B_{i,k}`.
    BSpline {
        i: isize,
        k: usize,
    },
    /// The whole vector `𝐁_k`.
    BSplineVector {
        k: usize,
    },
    /// The whole tensor vector `𝐃_k` in dimension `d`.
    Tensor {
        k: usize,
        d: usize,
    },
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Teeth { s } => write!(f, "teeth_{s}"),
            Target::Square => write!(f, "square"),
            Target::Product { s } => write!(f, "product_{s}"),
            Target::BSpline { i, k } => write!(f, "bspline({i},{k})"),
            Target::BSplineVector { k } => write!(f, "bspline_vector({k})"),
            Target::Tensor { k, d } => write!(f, "tensor({k},{d})"),
        }
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A network together with the sup-norm bound it is guaranteed to meet.
#[derive(Clone, Debug, PartialEq)]
pub struct CertifiedNet {
    pub net: ReluNetwork,
    pub target: Target,
    pub bound: f64,
    pub m: usize,
    pub range_lo: f64,
    pub range_hi: f64,
}

impl CertifiedNet {
    fn unit(net: ReluNetwork, target: Target, bound: f64, m: usize) -> Self {
        CertifiedNet {
            net,
            target,
            bound,
            m,
            range_lo: 0.0,
            range_hi: 1.0,
        }
    }
}

fn quarter_pow(m: usize) -> f64 {
    0.25f64.powi(m as i32)
}

pub fn sq_bound(m: usize) -> f64 {
    0.5f64.powi(2 * m as i32 + 2)
}

pub fn prod2_bound(m: usize) -> f64 {
    4.0 * quarter_pow(m)
}

pub fn prod_s_bound(m: usize, s: usize) -> f64 {
    (s as f64 - 1.0) * prod2_bound(m)
}

/// `Δ_k = (8^k/14)4^{-m}`.
pub fn tilde_b_bound(m: usize, k: usize) -> f64 {
    8f64.powi(k as i32) / 14.0 * quarter_pow(m)
}

/// `[4(d-1) + 8^k]4^{-m}`.
pub fn tilde_d_bound(m: usize, k: usize, d: usize) -> f64 {
    (4.0 * (d as f64 - 1.0) + 8f64.powi(k as i32)) * quarter_pow(m)
}

fn check_m(m: usize) -> Result<()> {
    if (1..=MAX_M).contains(&m) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "precision m must lie in 1..={MAX_M}, got {m}"
        )))
    }
}

/// The `s`-fold sawtooth `g_s = g∘⋯∘g` with `g(x) = 2σ(x) - 4σ(x-½) + 2σ(x-1)`.
pub fn build_teeth(s: usize) -> Result<ReluNetwork> {
    if s < 1 {
        return Err(Error::domain("teeth order s must be at least 1"));
    }
    let mut c = Circuit::new(1);
    let mut g = c.inputs().remove(0);
    for _ in 0..s {
        let v = c.push(&[g.clone(), g.plus(-0.5), g.plus(-1.0)]);
        g = Lin::combine(&[(2.0, &v[0]), (-4.0, &v[1]), (2.0, &v[2])], 0.0);
    }
    c.finish(&[g])
}

/// `SQ ∈ NN(2m, (1,4,2,…,4,2,1))`, the piecewise linear interpolant of `x²`
/// at the points `j 2^{-m}`.
pub fn build_sq(m: usize) -> Result<CertifiedNet> {
    check_m(m)?;
    let mut c = Circuit::new(1);
    let x = c.inputs();
    let (sq, _) = sq_stage(&mut c, &x, &[], m);
    Ok(CertifiedNet::unit(
        c.finish(&sq)?,
        Target::Square,
        sq_bound(m),
        m,
    ))
}

/// `×₂ ∈ NN(2m+2, (2,3,12,6,…,12,6,1))`: pairing layer `((x+y)/2, x, y)`,
/// three squares side by side and a normalising output neuron.
pub fn build_prod2(m: usize) -> Result<CertifiedNet> {
    check_m(m)?;
    let eps = quarter_pow(m);
    let pairing = ReluNetwork::new(
        2,
        vec![Layer::new(
            DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 1.0, 0.0, 0.0, 1.0]),
            vec![0.0; 3],
        )?],
        DMatrix::identity(3, 3),
    )?;
    let sq = build_sq(m)?.net;
    let squares = parallel(&[sq.clone(), sq.clone(), sq], false)?;
    let combine = ReluNetwork::new(
        3,
        vec![Layer::new(
            DMatrix::from_row_slice(1, 3, &[2.0, -0.5, -0.5]),
            vec![-eps],
        )?],
        DMatrix::from_element(1, 1, 1.0 / (1.0 + 2.0 * eps)),
    )?;
    let net = compose(&combine, &compose(&squares, &pairing)?)?;
    Ok(CertifiedNet::unit(
        net,
        Target::Product { s: 2 },
        prod2_bound(m),
        m,
    ))
}

/// `×_s(x₁,…,x_s) = ×₂(×_{s-1}(x₁,…,x_{s-1}), x_s)`. The last input rides an
/// identity rail beside `×_{s-1}`, then one storage layer holds both values
/// before the final `×₂`.
pub fn build_prod_s(m: usize, s: usize) -> Result<CertifiedNet> {
    check_m(m)?;
    if s < 2 {
        return Err(Error::domain(format!(
            "product arity s must be at least 2, got {s}"
        )));
    }
    let prod2 = build_prod2(m)?.net;
    let mut net = prod2.clone();
    for _ in 3..=s {
        let depth = net.depth();
        let rail = pad_depth(&ReluNetwork::identity(1)?, depth)?;
        let stored = pad_depth(&parallel(&[net, rail], false)?, depth + 1)?;
        net = compose(&prod2, &stored)?;
    }
    Ok(CertifiedNet::unit(
        net,
        Target::Product { s },
        prod_s_bound(m, s),
        m,
    ))
}

fn check_grid(grid: &KnotGrid) -> Result<()> {
    if grid.is_cardinal() {
        Ok(())
    } else {
        Err(Error::domain(
            "certified constructions require a cardinal knot grid",
        ))
    }
}

/// Pushes the B̃ layers for every coordinate form in `xs` and returns, per
/// coordinate, the `M + k - 1` forms `B̃_{i,k}` over the current layer.
fn tilde_b_forms(c: &mut Circuit, xs: &[Lin], grid: &KnotGrid, m: usize) -> Vec<Vec<Lin>> {
    let k = grid.order();
    let (lo, hi) = grid.knot_range();
    let nk = (hi - lo + 1) as usize;
    let t = |j: isize| grid.knot(j);
    let knot_forms = |x: &Lin| (lo..=hi).map(move |j| x.plus(-t(j))).collect::<Vec<_>>();

    let first: Vec<Lin> = xs.iter().flat_map(knot_forms).collect();
    let vars = c.push(&first);
    let mut knots: Vec<Vec<Lin>> = vars.chunks(nk).map(<[Lin]>::to_vec).collect();
    let kn = |knots: &Vec<Lin>, j: isize| knots[(j - lo) as usize].clone();

    // order 2: exact hats c1 K_i + c2 K_{i+1} + c3 K_{i+2}
    let mut basis: Vec<Vec<Lin>> = knots
        .iter()
        .map(|kk| {
            (lo..=grid.last_index(2))
                .map(|i| {
                    let c1 = 1.0 / (t(i + 1) - t(i));
                    let c2 = -c1 * (t(i + 2) - t(i)) / (t(i + 2) - t(i + 1));
                    let c3 = -c1 - c2;
                    Lin::combine(
                        &[(c1, &kn(kk, i)), (c2, &kn(kk, i + 1)), (c3, &kn(kk, i + 2))],
                        0.0,
                    )
                })
                .collect()
        })
        .collect();

    let eps = quarter_pow(m);
    for s in 2..k {
        let delta = tilde_b_bound(m, s);
        let pad = 2.0 * 4.0 * eps + 2.0 * delta;
        let norm = 1.0 / (1.0 + 2.0 * pad);
        let s_i = s as isize;
        let new_hi = grid.last_index(s + 1);
        let mut values = Vec::new();
        let mut pairs = Vec::new();
        let mut rails = Vec::new();
        for (kk, bb) in knots.iter().zip(&basis) {
            let base = values.len();
            let count_new = (new_hi - lo + 1) as usize;
            for i in lo..=new_hi {
                let wa = 1.0 / (t(i + s_i) - t(i));
                values.push(Lin::combine(
                    &[(wa, &kn(kk, i)), (-wa, &kn(kk, i + s_i))],
                    0.0,
                ));
            }
            for i in lo..=new_hi {
                let wb = 1.0 / (t(i + s_i + 1) - t(i + 1));
                values.push(Lin::combine(
                    &[(-wb, &kn(kk, i + 1)), (wb, &kn(kk, i + s_i + 1))],
                    1.0,
                ));
            }
            let b0 = values.len();
            values.extend(bb.iter().cloned());
            for r in 0..count_new {
                pairs.push((base + r, b0 + r));
                pairs.push((base + count_new + r, b0 + r + 1));
            }
            rails.push(kn(kk, 0));
        }
        let (prods, xrails) = shared_products(c, &values, &pairs, &rails, m);
        let per = (new_hi - lo + 1) as usize;
        let mut forms = Vec::new();
        for coord in 0..xs.len() {
            for r in 0..per {
                let p = 2 * (coord * per + r);
                forms.push(Lin::combine(
                    &[(norm, &prods[p]), (norm, &prods[p + 1])],
                    norm * pad,
                ));
            }
        }
        let more = s + 1 < k;
        if more {
            for x in &xrails {
                forms.extend(knot_forms(x));
            }
        }
        let vars = c.push(&forms);
        basis = vars[..xs.len() * per]
            .chunks(per)
            .map(<[Lin]>::to_vec)
            .collect();
        if more {
            knots = vars[xs.len() * per..]
                .chunks(nk)
                .map(<[Lin]>::to_vec)
                .collect();
        }
    }
    basis
}

/// `B̃_k` as one vector network plus one pruned network per basis function.
#[derive(Clone, Debug)]
pub struct TildeB {
    pub vector: CertifiedNet,
    pub parts: Vec<CertifiedNet>,
}

/// The vector network `𝐁̃_k` on a cardinal grid, `x ↦ (B̃_{-k+1,k}(x), …, B̃_{M-1,k}(x))`.
pub fn build_tilde_b_vector(grid: &KnotGrid, m: usize) -> Result<CertifiedNet> {
    check_m(m)?;
    check_grid(grid)?;
    let mut c = Circuit::new(1);
    let x = c.inputs();
    let forms = tilde_b_forms(&mut c, &x, grid, m).remove(0);
    let net = c.finish(&forms)?.prune();
    let k = grid.order();
    Ok(CertifiedNet::unit(
        net,
        Target::BSplineVector { k },
        tilde_b_bound(m, k),
        m,
    ))
}

/// [`build_tilde_b_vector`] together with each `B̃_{i,k}` as its own network.
pub fn build_tilde_b(grid: &KnotGrid, m: usize) -> Result<TildeB> {
    let vector = build_tilde_b_vector(grid, m)?;
    let k = grid.order();
    let parts = (0..grid.basis_len())
        .map(|r| {
            let net = vector.net.select_outputs(&[r])?.prune();
            let i = grid.first_index() + r as isize;
            Ok(CertifiedNet::unit(
                net,
                Target::BSpline { i, k },
                vector.bound,
                m,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TildeB { vector, parts })
}

/// The tensor network `𝐃̃_k` on `[0,1]^d`, outputs in
/// [`TensorIndexSet`] order.
///
/// Each coordinate gets its own `𝐁̃_k` block; products are then formed
/// coordinate by coordinate, the running prefix products pairing with the
/// next coordinate's values (prefix outer, new index inner), while the
/// remaining coordinates ride identity rails.
pub fn build_tilde_d(grid: &KnotGrid, d: usize, m: usize) -> Result<CertifiedNet> {
    check_m(m)?;
    check_grid(grid)?;
    TensorIndexSet::new(grid, d)?;
    let mut c = Circuit::new(d);
    let xs = c.inputs();
    let mut blocks = tilde_b_forms(&mut c, &xs, grid, m);
    let n = grid.basis_len();
    let mut prefix = blocks[0].clone();
    for j in 1..d {
        let mut values = prefix.clone();
        values.extend(blocks[j].iter().cloned());
        let np = prefix.len();
        let pairs: Vec<(usize, usize)> = (0..np)
            .flat_map(|p| (0..n).map(move |i| (p, np + i)))
            .collect();
        let rails: Vec<Lin> = blocks[j + 1..].concat();
        let (prods, rails) = shared_products(&mut c, &values, &pairs, &rails, m);
        let mut forms = prods;
        let nprod = forms.len();
        forms.extend(rails);
        let vars = c.push(&forms);
        prefix = vars[..nprod].to_vec();
        for (r, block) in blocks[j + 1..].iter_mut().enumerate() {
            *block = vars[nprod + r * n..nprod + (r + 1) * n].to_vec();
        }
    }
    let net = c.finish(&prefix)?.prune();
    let k = grid.order();
    Ok(CertifiedNet::unit(
        net,
        Target::Tensor { k, d },
        tilde_d_bound(m, k, d),
        m,
    ))
}

/// `f̂_net(𝐱) = Σ_𝐢 b̂_𝐢 D̃_{𝐢,k}(𝐱)`: the coefficients become the output row.
pub fn assemble_fnet(coeffs: &[f64], dnet: &CertifiedNet) -> Result<ReluNetwork> {
    let q = dnet.net.output_dim();
    if coeffs.len() != q {
        return Err(Error::domain(format!(
            "coefficient vector has length {}, network has {q} outputs",
            coeffs.len()
        )));
    }
    dnet.net.map_output(&DMatrix::from_row_slice(1, q, coeffs))
}

/// Depth of the vector `𝐁̃_k` network, `1 + (k-2)(2m+2)`.
pub fn tilde_b_depth(m: usize, k: usize) -> usize {
    1 + (k - 2) * (2 * m + 2)
}

/// Depth of `𝐃̃_k`, `1 + (k+d-3)(2m+2)`.
pub fn tilde_d_depth(m: usize, k: usize, d: usize) -> usize {
    1 + (k + d - 3) * (2 * m + 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn teeth_oracle(s: usize, x: f64) -> f64 {
        let u = x * 2f64.powi(s as i32);
        (u - 2.0 * (u / 2.0).round()).abs()
    }

    #[test]
    fn teeth_values() {
        let g1 = build_teeth(1).unwrap();
        assert_eq!(g1.evaluate(&[0.5]).unwrap()[0], 1.0);
        let g2 = build_teeth(2).unwrap();
        assert_eq!(g2.evaluate(&[0.25]).unwrap()[0], 1.0);
        assert_eq!(g2.evaluate(&[0.5]).unwrap()[0], 0.0);
        for s in 1..=6 {
            let g = build_teeth(s).unwrap();
            assert_eq!(g.depth(), s);
            assert_eq!(g.architecture().max_width, 3);
            assert_eq!(g.evaluate(&[0.0]).unwrap()[0], 0.0);
            for j in 0..=1000 {
                let x = j as f64 / 1000.0;
                assert!((g.evaluate(&[x]).unwrap()[0] - teeth_oracle(s, x)).abs() < 1e-12);
            }
        }
        assert!(build_teeth(0).is_err());
    }

    #[test]
    fn sq_architecture_and_interpolation() {
        let sq = build_sq(3).unwrap();
        let arch = sq.net.architecture();
        assert_eq!(arch.depth, 6);
        assert_eq!(arch.max_width, 4);
        assert_eq!(arch.widths, vec![4, 2, 4, 2, 4, 2]);
        for m in 1..=8 {
            let sq = build_sq(m).unwrap();
            assert_eq!(sq.net.evaluate(&[0.0]).unwrap()[0], 0.0);
            assert_eq!(sq.net.evaluate(&[1.0]).unwrap()[0], 1.0);
            let odd = 1.0 / 2f64.powi(m as i32 + 1);
            let err = sq.net.evaluate(&[odd]).unwrap()[0] - odd * odd;
            assert_eq!(err, sq_bound(m));
        }
        assert!(build_sq(0).is_err());
        assert!(build_sq(21).is_err());
    }

    #[test]
    fn prod2_origin_value_and_shape() {
        for m in 1..=6 {
            let p = build_prod2(m).unwrap();
            let eps = 0.25f64.powi(m as i32);
            let v = p.net.evaluate(&[0.0, 0.0]).unwrap()[0];
            assert!((v - eps / (1.0 + 2.0 * eps)).abs() < 1e-15);
            let arch = p.net.architecture();
            assert_eq!(arch.depth, 2 * m + 2);
            assert_eq!(arch.max_width, 12);
            assert_eq!(arch.widths[0], 3);
            assert_eq!(*arch.widths.last().unwrap(), 1);
        }
    }

    #[test]
    fn prod_s_architecture() {
        let p = build_prod_s(2, 4).unwrap();
        assert_eq!(p.net.depth(), 20);
        assert!(p.net.architecture().max_width <= 14);
        for s in 2..=5 {
            for m in 1..=4 {
                let p = build_prod_s(m, s).unwrap();
                assert_eq!(p.net.depth(), (s - 1) * (2 * m + 3) - 1);
                assert!(p.net.architecture().max_width <= 10 + s);
                assert_eq!(p.net.input_dim(), s);
            }
        }
        assert!(build_prod_s(3, 1).is_err());
    }

    #[test]
    fn order_two_is_exact() {
        let g = KnotGrid::cardinal(4, 2).unwrap();
        let tb = build_tilde_b(&g, 3).unwrap();
        assert_eq!(tb.vector.net.depth(), 1);
        assert_eq!(tb.parts.len(), 5);
        assert_eq!(tb.parts[2].net.evaluate(&[0.5]).unwrap()[0], 1.0);
        for j in 0..=1000 {
            let x = j as f64 / 1000.0;
            let want = g.eval_basis_vector(x).unwrap();
            let got = tb.vector.net.evaluate(&[x]).unwrap();
            for (a, b) in want.iter().zip(&got) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cubic_vector_within_bound() {
        let g = KnotGrid::cardinal(4, 3).unwrap();
        let v = build_tilde_b_vector(&g, 4).unwrap();
        assert_eq!(v.net.depth(), tilde_b_depth(4, 3));
        let mut worst = 0.0f64;
        for j in 0..=2000 {
            let x = j as f64 / 2000.0;
            let want = g.eval_basis_vector(x).unwrap();
            let got = v.net.evaluate(&[x]).unwrap();
            for (a, b) in want.iter().zip(&got) {
                worst = worst.max((a - b).abs());
                assert!((0.0..=1.0).contains(b));
            }
        }
        assert!(worst <= v.bound, "{worst} > {}", v.bound);
    }

    #[test]
    fn tensor_net_d1_matches_vector() {
        let g = KnotGrid::cardinal(4, 3).unwrap();
        let d1 = build_tilde_d(&g, 1, 3).unwrap();
        let v = build_tilde_b_vector(&g, 3).unwrap();
        assert_eq!(d1.net, v.net);
        assert!(d1.bound >= v.bound);
    }

    #[test]
    fn non_cardinal_rejected() {
        let g = KnotGrid::from_knots(2, vec![-0.4, 0.0, 0.4, 1.0, 1.6]).unwrap();
        assert!(build_tilde_b(&g, 2).is_err());
    }

    #[test]
    fn assemble_picks_outputs() {
        let g = KnotGrid::cardinal(2, 2).unwrap();
        let d = build_tilde_d(&g, 2, 2).unwrap();
        let q = d.net.output_dim();
        assert_eq!(q, 9);
        let mut e = vec![0.0; q];
        e[4] = 1.0;
        let f = assemble_fnet(&e, &d).unwrap();
        let z = assemble_fnet(&vec![0.0; q], &d).unwrap();
        for p in [[0.1, 0.9], [0.5, 0.5], [0.33, 0.77]] {
            assert_eq!(f.evaluate(&p).unwrap()[0], d.net.evaluate(&p).unwrap()[4]);
            assert_eq!(z.evaluate(&p).unwrap()[0], 0.0);
        }
        assert!(assemble_fnet(&[1.0], &d).is_err());
    }
}
