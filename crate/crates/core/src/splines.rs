//! B-splines on extended knot sequences over `[0, 1]`, their tensor products
//! and the truncated power basis of the additive model.
//!
//! Knots are indexed `t_{-k+1}, …, t_{M+k-1}` with `t_0 = 0` and `t_M = 1`.
//! The order-`s` B-spline `B_{i,s}` is supported on `[t_i, t_{i+s}]`, and the
//! order-`k` basis is `B_{-k+1,k}, …, B_{M-1,k}` (length `M + k - 1`).
//!
//! Evaluation is restricted to `[0, 1]`. Every basis function of order at
//! least two is continuous there, so the value at a knot does not depend on
//! which side of the knot the evaluation routine looks at; `x = 1` is handled
//! with the last interior interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default cap on the number of tensor basis functions.
pub const DEFAULT_BASIS_CAP: usize = 1_000_000;

/// Tolerance used to recognise cardinal knots after deserialisation.
const CARDINAL_TOL: f64 = 1e-12;

/// Extended knot sequence of a univariate spline space of order `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr<T>", into = "GridRepr<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct KnotGrid<T = f64> {
    order: usize,
    interior_count: usize,
    knots: Vec<T>,
    separation: T,
    cardinal: bool,
}

#[derive(Serialize, Deserialize)]
struct GridRepr<T> {
    #[serde(rename = "M")]
    interior_count: usize,
    k: usize,
    knots: Vec<T>,
}

impl<T: Scalar> TryFrom<GridRepr<T>> for KnotGrid<T> {
    type Error = Error;

    fn try_from(repr: GridRepr<T>) -> Result<Self> {
        let grid = KnotGrid::from_knots(repr.k, repr.knots)?;
        if grid.interior_count != repr.interior_count {
            return Err(Error::domain(format!(
                "knot count implies M = {}, header says M = {}",
                grid.interior_count, repr.interior_count
            )));
        }
        Ok(grid)
    }
}

impl<T: Scalar> From<KnotGrid<T>> for GridRepr<T> {
    fn from(grid: KnotGrid<T>) -> Self {
        GridRepr {
            interior_count: grid.interior_count,
            k: grid.order,
            knots: grid.knots,
        }
    }
}

impl<T: Scalar> KnotGrid<T> {
    /// Equally spaced knots `t_i = i / M`, `i = -k+1, …, M+k-1`.
    pub fn cardinal(interior_count: usize, order: usize) -> Result<Self> {
        if interior_count < 2 {
            return Err(Error::domain(format!(
                "interior knot count M must be at least 2, got {interior_count}"
            )));
        }
        if order < 2 {
            return Err(Error::domain(format!(
                "spline order k must be at least 2, got {order}"
            )));
        }
        let m = T::from_usize_lossy(interior_count);
        let lo = -(order as isize - 1);
        let hi = (interior_count + order - 1) as isize;
        let knots = (lo..=hi).map(|i| T::from_isize_lossy(i) / m).collect();
        Ok(KnotGrid {
            order,
            interior_count,
            knots,
            separation: T::one() / m,
            cardinal: true,
        })
    }

    /// Arbitrary strictly increasing knots with `t_0 = 0` and `t_M = 1`.
    ///
    /// The grid is flagged cardinal when every spacing equals `1/M` to within
    /// `1e-12`; otherwise the separation is the largest spacing.
    pub fn from_knots(order: usize, knots: Vec<T>) -> Result<Self> {
        if order < 2 {
            return Err(Error::domain(format!(
                "spline order k must be at least 2, got {order}"
            )));
        }
        let extra = 2 * order - 1;
        if knots.len() < extra + 2 {
            return Err(Error::domain(format!(
                "order {order} needs at least {} knots, got {}",
                extra + 2,
                knots.len()
            )));
        }
        let interior_count = knots.len() - extra;
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::domain("knots must be finite"));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("knots must be strictly increasing"));
        }
        let zero = knots[order - 1];
        let one = knots[order - 1 + interior_count];
        if zero != T::zero() || one != T::one() {
            return Err(Error::domain(format!(
                "knots must satisfy t_0 = 0 and t_M = 1, got t_0 = {zero}, t_M = {one}"
            )));
        }
        let h = 1.0 / interior_count as f64;
        let mut widest = T::zero();
        let mut cardinal = true;
        for w in knots.windows(2) {
            let gap = w[1] - w[0];
            widest = widest.max(gap);
            if (gap.to_f64_lossy() - h).abs() > CARDINAL_TOL {
                cardinal = false;
            }
        }
        let separation = if cardinal {
            T::one() / T::from_usize_lossy(interior_count)
        } else {
            widest
        };
        Ok(KnotGrid {
            order,
            interior_count,
            knots,
            separation,
            cardinal,
        })
    }

    /// Spline order `k` (polynomial degree `k - 1`).
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of interior intervals `M`.
    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    /// Knot separation `h` (`1/M` for cardinal grids, the widest gap otherwise).
    pub fn separation(&self) -> T {
        self.separation
    }

    pub fn is_cardinal(&self) -> bool {
        self.cardinal
    }

    /// All knots `t_{-k+1}, …, t_{M+k-1}`.
    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Number of order-`k` basis functions, `M + k - 1`.
    pub fn basis_len(&self) -> usize {
        self.interior_count + self.order - 1
    }

    /// Index of the first basis function, `-k + 1`.
    pub fn first_index(&self) -> isize {
        -(self.order as isize - 1)
    }

    /// Knot `t_i` for `-k+1 <= i <= M+k-1`.
    ///
    /// # Panics
    /// If `i` is outside the knot range.
    pub fn knot(&self, i: isize) -> T {
        self.knots[(i + self.order as isize - 1) as usize]
    }

    /// Index range `lo..=hi` of the knots.
    pub fn knot_range(&self) -> (isize, isize) {
        (
            self.first_index(),
            (self.interior_count + self.order - 1) as isize,
        )
    }

    /// Largest valid index of an order-`s` B-spline, `M + k - s - 1`.
    pub fn last_index(&self, s: usize) -> isize {
        (self.interior_count + self.order) as isize - s as isize - 1
    }

    fn check_unit(x: T) -> Result<()> {
        if x >= T::zero() && x <= T::one() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "evaluation point {x} is outside [0, 1]"
            )))
        }
    }

    /// Interval index `j` with `t_j <= x < t_{j+1}`, using `M - 1` for `x = 1`.
    fn span(&self, x: T) -> isize {
        let m = self.interior_count as isize;
        // binary search over the interior knots t_0..t_M
        let (mut lo, mut hi) = (0isize, m);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x >= self.knot(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Order-`s` B-spline `B_{i,s}(x)` computed with the two-term induction that
    /// starts from the hat functions `B_{i,2}`.
    pub fn eval_bspline(&self, i: isize, s: usize, x: T) -> Result<T> {
        if s < 2 || s > self.order {
            return Err(Error::domain(format!(
                "order s = {s} must lie in 2..={}",
                self.order
            )));
        }
        if i < self.first_index() || i > self.last_index(s) {
            return Err(Error::domain(format!(
                "index {i} out of range {}..={} for order {s}",
                self.first_index(),
                self.last_index(s)
            )));
        }
        Self::check_unit(x)?;
        Ok(self.induction(i, s, x))
    }

    fn induction(&self, i: isize, s: usize, x: T) -> T {
        if s == 2 {
            return self.hat(i, x);
        }
        let r = s - 1;
        let a = self.ramp_up(i, r, x);
        let b = self.ramp_down(i, r, x);
        let left = if a == T::zero() {
            T::zero()
        } else {
            a * self.induction(i, r, x)
        };
        let right = if b == T::zero() {
            T::zero()
        } else {
            b * self.induction(i + 1, r, x)
        };
        left + right
    }

    fn hat(&self, i: isize, x: T) -> T {
        let (t0, t1, t2) = (self.knot(i), self.knot(i + 1), self.knot(i + 2));
        if x < t0 || x > t2 {
            T::zero()
        } else if x <= t1 {
            (x - t0) / (t1 - t0)
        } else {
            (t2 - x) / (t2 - t1)
        }
    }

    /// `a_{i,s}(x)`: rising ramp on `[t_i, t_{i+s}]`, zero elsewhere.
    fn ramp_up(&self, i: isize, s: usize, x: T) -> T {
        let (lo, hi) = (self.knot(i), self.knot(i + s as isize));
        if x < lo || x > hi {
            T::zero()
        } else {
            (x - lo) / (hi - lo)
        }
    }

    /// `b_{i,s}(x)`: falling ramp on `[t_{i+1}, t_{i+s+1}]`, zero elsewhere.
    fn ramp_down(&self, i: isize, s: usize, x: T) -> T {
        let (lo, hi) = (self.knot(i + 1), self.knot(i + s as isize + 1));
        if x < lo || x > hi {
            T::zero()
        } else {
            (hi - x) / (hi - lo)
        }
    }

    /// The `k` possibly nonzero order-`k` basis values at `x`.
    ///
    /// Returns the position (0-based, in `0..M+k-1`) of the first value and the
    /// values themselves, computed with the triangular de Boor scheme.
    pub fn local_basis(&self, x: T) -> Result<(usize, Vec<T>)> {
        Self::check_unit(x)?;
        let k = self.order;
        let j = self.span(x);
        let mut values = vec![T::zero(); k];
        let mut left = vec![T::zero(); k];
        let mut right = vec![T::zero(); k];
        values[0] = T::one();
        for r in 1..k {
            left[r] = x - self.knot(j + 1 - r as isize);
            right[r] = self.knot(j + r as isize) - x;
            let mut saved = T::zero();
            for s in 0..r {
                let temp = values[s] / (right[s + 1] + left[r - s]);
                values[s] = saved + right[s + 1] * temp;
                saved = left[r - s] * temp;
            }
            values[r] = saved;
        }
        // first nonzero basis index is j - k + 1, stored at position j
        Ok((j as usize, values))
    }

    /// `𝐁_k(x) = (B_{-k+1,k}(x), …, B_{M-1,k}(x))`.
    pub fn eval_basis_vector(&self, x: T) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.basis_len()];
        self.eval_basis_into(x, &mut out)?;
        Ok(out)
    }

    /// Writes `𝐁_k(x)` into `out`, which must have length `M + k - 1`.
    pub fn eval_basis_into(&self, x: T, out: &mut [T]) -> Result<()> {
        if out.len() != self.basis_len() {
            return Err(Error::domain(format!(
                "output buffer has length {}, expected {}",
                out.len(),
                self.basis_len()
            )));
        }
        let (start, values) = self.local_basis(x)?;
        out.iter_mut().for_each(|v| *v = T::zero());
        out[start..start + values.len()].copy_from_slice(&values);
        Ok(())
    }

    /// Converts the grid to another floating-point type.
    pub fn cast<U: Scalar>(&self) -> KnotGrid<U> {
        KnotGrid {
            order: self.order,
            interior_count: self.interior_count,
            knots: self
                .knots
                .iter()
                .map(|t| U::from_f64_lossy(t.to_f64_lossy()))
                .collect(),
            separation: U::from_f64_lossy(self.separation.to_f64_lossy()),
            cardinal: self.cardinal,
        }
    }
}

/// The tensor index set `Γ = {-k+1, …, M-1}^d`, enumerated lexicographically
/// with the first coordinate varying slowest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorIndexSet {
    dim: usize,
    first: isize,
    per_axis: usize,
    len: usize,
}

impl TensorIndexSet {
    pub fn new<T: Scalar>(grid: &KnotGrid<T>, dim: usize) -> Result<Self> {
        Self::with_cap(grid, dim, DEFAULT_BASIS_CAP)
    }

    pub fn with_cap<T: Scalar>(grid: &KnotGrid<T>, dim: usize, cap: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dimension d must be at least 1"));
        }
        let per_axis = grid.basis_len();
        let len = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(per_axis));
        match len {
            Some(len) if len <= cap => Ok(TensorIndexSet {
                dim,
                first: grid.first_index(),
                per_axis,
                len,
            }),
            _ => Err(Error::Resource(format!(
                "(M+k-1)^d = {per_axis}^{dim} exceeds the basis cap {cap}"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `q = (M + k - 1)^d`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    /// Position of the multi-index `𝐢` in the enumeration.
    pub fn position(&self, index: &[isize]) -> Option<usize> {
        if index.len() != self.dim {
            return None;
        }
        let mut pos = 0usize;
        for &i in index {
            let off = i - self.first;
            if off < 0 || off as usize >= self.per_axis {
                return None;
            }
            pos = pos * self.per_axis + off as usize;
        }
        Some(pos)
    }

    /// Multi-index at position `pos`.
    pub fn index_at(&self, mut pos: usize) -> Vec<isize> {
        let mut idx = vec![0isize; self.dim];
        for slot in idx.iter_mut().rev() {
            *slot = (pos % self.per_axis) as isize + self.first;
            pos /= self.per_axis;
        }
        idx
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<isize>> + '_ {
        (0..self.len).map(move |p| self.index_at(p))
    }
}

/// `𝐃_k(𝐱)`: all tensor-product B-splines `∏_j B_{i_j,k}(x_j)` in
/// [`TensorIndexSet`] order.
pub fn eval_tensor_vector<T: Scalar>(grid: &KnotGrid<T>, dim: usize, x: &[T]) -> Result<Vec<T>> {
    let set = TensorIndexSet::new(grid, dim)?;
    if x.len() != dim {
        return Err(Error::domain(format!(
            "point has {} coordinates, expected {dim}",
            x.len()
        )));
    }
    let mut out = vec![T::one()];
    for &xj in x {
        let b = grid.eval_basis_vector(xj)?;
        let mut next = Vec::with_capacity(out.len() * b.len());
        for &prefix in &out {
            next.extend(b.iter().map(|&v| prefix * v));
        }
        out = next;
    }
    debug_assert_eq!(out.len(), set.len());
    Ok(out)
}

/// Nonzero entries of `𝐃_k(𝐱)` as `(position, value)` pairs, at most `k^d`.
pub fn tensor_nonzeros<T: Scalar>(grid: &KnotGrid<T>, x: &[T]) -> Result<Vec<(usize, T)>> {
    let per_axis = grid.basis_len();
    let mut out = vec![(0usize, T::one())];
    for &xj in x {
        let (start, vals) = grid.local_basis(xj)?;
        let mut next = Vec::with_capacity(out.len() * vals.len());
        for &(pos, prefix) in &out {
            for (r, &v) in vals.iter().enumerate() {
                if v != T::zero() {
                    next.push((pos * per_axis + start + r, prefix * v));
                }
            }
        }
        out = next;
    }
    Ok(out)
}

/// Per-coordinate polynomial spline bases `x, …, x^{k_j-1}, (x - t_{1,j})_+^{k_j-1}, …,
/// (x - t_{M_j-1,j})_+^{k_j-1}` preceded by a global intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct TruncatedPowerBasis<T = f64> {
    grids: Vec<KnotGrid<T>>,
}

impl<T: Scalar> TruncatedPowerBasis<T> {
    pub fn new(grids: Vec<KnotGrid<T>>) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::domain(
                "additive basis needs at least one coordinate",
            ));
        }
        Ok(TruncatedPowerBasis { grids })
    }

    /// Cardinal grids from `(M_j, k_j)` pairs.
    pub fn cardinal(spec: &[(usize, usize)]) -> Result<Self> {
        let grids = spec
            .iter()
            .map(|&(m, k)| KnotGrid::cardinal(m, k))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grids)
    }

    pub fn dim(&self) -> usize {
        self.grids.len()
    }

    pub fn grid(&self, j: usize) -> &KnotGrid<T> {
        &self.grids[j]
    }

    pub fn grids(&self) -> &[KnotGrid<T>] {
        &self.grids
    }

    /// `M_j + k_j - 2`.
    pub fn block_len(&self, j: usize) -> usize {
        let g = &self.grids[j];
        g.interior_count() + g.order() - 2
    }

    /// Offset of block `j` inside the full vector (the intercept sits at 0).
    pub fn block_offset(&self, j: usize) -> usize {
        1 + (0..j).map(|r| self.block_len(r)).sum::<usize>()
    }

    /// `q_+ = 1 + Σ_j (M_j + k_j - 2)`.
    pub fn len(&self) -> usize {
        1 + (0..self.dim()).map(|j| self.block_len(j)).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The block `𝐏_{k_j,j}(x)`.
    pub fn eval_block(&self, j: usize, x: T) -> Result<Vec<T>> {
        KnotGrid::<T>::check_unit(x)?;
        let g = &self.grids[j];
        let deg = g.order() - 1;
        let mut out = Vec::with_capacity(self.block_len(j));
        let mut p = T::one();
        for _ in 0..deg {
            p = p * x;
            out.push(p);
        }
        for i in 1..g.interior_count() as isize {
            let u = x - g.knot(i);
            out.push(if u > T::zero() {
                u.powi(deg as i32)
            } else {
                T::zero()
            });
        }
        Ok(out)
    }

    /// `∫_0^1` of every function in block `j`.
    pub fn block_integrals(&self, j: usize) -> Vec<T> {
        let g = &self.grids[j];
        let k = g.order();
        let mut out: Vec<T> = (1..k)
            .map(|p| T::one() / T::from_usize_lossy(p + 1))
            .collect();
        for i in 1..g.interior_count() as isize {
            let tail = T::one() - g.knot(i);
            out.push(tail.powi(k as i32) / T::from_usize_lossy(k));
        }
        out
    }

    /// `𝐏(𝐱) = (1, 𝐏_{k_1,1}(x_1), …, 𝐏_{k_d,d}(x_d))`.
    pub fn eval(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::domain(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let mut out = Vec::with_capacity(self.len());
        out.push(T::one());
        for (j, &xj) in x.iter().enumerate() {
            out.extend(self.eval_block(j, xj)?);
        }
        Ok(out)
    }
}

/// Free-function form of [`KnotGrid::cardinal`].
pub fn make_cardinal_grid(interior_count: usize, order: usize) -> Result<KnotGrid<f64>> {
    KnotGrid::cardinal(interior_count, order)
}

/// Free-function form of [`TruncatedPowerBasis::eval`].
pub fn eval_truncpower_vector<T: Scalar>(
    basis: &TruncatedPowerBasis<T>,
    x: &[T],
) -> Result<Vec<T>> {
    basis.eval(x)
}
