//! Fully connected ReLU networks
//! `x ↦ W_{L+1} σ_{v_L} W_L ⋯ σ_{v_1} W_1 x` with `σ_v(y) = max(y - v, 0)`.
//!
//! Weights are held in dense matrices. The explicit constructions in
//! [`crate::constructor`] are very sparse, so evaluation goes through a
//! compressed-row plan built on first use; it adds the nonzero terms of each
//! dot product in the same column order as the dense formula and therefore
//! returns bit-identical results (see [`ReluNetwork::evaluate_dense`]).

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Points evaluated together by the batch kernels.
const CHUNK: usize = 64;

/// Depth and per-layer widths of a network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub widths: Vec<usize>,
    pub max_width: usize,
}

/// One hidden layer `σ(W y - v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weights: DMatrix<T>,
    pub shift: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weights: DMatrix<T>, shift: Vec<T>) -> Result<Self> {
        if weights.nrows() != shift.len() {
            return Err(Error::domain(format!(
                "layer has {} rows but {} shifts",
                weights.nrows(),
                shift.len()
            )));
        }
        Ok(Layer { weights, shift })
    }

    pub fn width(&self) -> usize {
        self.shift.len()
    }
}

#[derive(Debug)]
struct SparseRows<T> {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<T>,
}

impl<T: Scalar> SparseRows<T> {
    fn from_dense(w: &DMatrix<T>) -> Self {
        let mut row_ptr = Vec::with_capacity(w.nrows() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                let v = w[(r, c)];
                if v != T::zero() {
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseRows {
            row_ptr,
            cols,
            vals,
        }
    }

    fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// `out[r*chunk + p] = Σ_c W[r,c] · inp[c*chunk + p]` for `p < used`.
    fn apply(&self, inp: &[T], out: &mut [T], chunk: usize, used: usize) {
        for r in 0..self.rows() {
            let dst = &mut out[r * chunk..r * chunk + used];
            dst.iter_mut().for_each(|v| *v = T::zero());
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[e] as usize;
                let w = self.vals[e];
                let src = &inp[c * chunk..c * chunk + used];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + w * s;
                }
            }
        }
    }
}

#[derive(Debug)]
struct Plan<T> {
    hidden: Vec<(SparseRows<T>, Vec<T>)>,
    output: SparseRows<T>,
    max_width: usize,
}

/// A ReLU network. Output has no bias term; constants enter through shifts.
#[derive(Debug)]
pub struct ReluNetwork<T = f64> {
    input_dim: usize,
    layers: Vec<Layer<T>>,
    w_out: DMatrix<T>,
    plan: OnceLock<Plan<T>>,
}

impl<T: Scalar> Clone for ReluNetwork<T> {
    fn clone(&self) -> Self {
        ReluNetwork {
            input_dim: self.input_dim,
            layers: self.layers.clone(),
            w_out: self.w_out.clone(),
            plan: OnceLock::new(),
        }
    }
}

impl<T: Scalar> PartialEq for ReluNetwork<T> {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.layers == other.layers
            && self.w_out == other.w_out
    }
}

fn mat_mul<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    for r in 0..a.nrows() {
        for j in 0..a.ncols() {
            let w = a[(r, j)];
            if w == T::zero() {
                continue;
            }
            for c in 0..b.ncols() {
                let bv = b[(j, c)];
                if bv != T::zero() {
                    out[(r, c)] = out[(r, c)] + w * bv;
                }
            }
        }
    }
    out
}

fn block_diag<T: Scalar>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(*b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

fn vstack<T: Scalar>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks[0].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(*b);
        r0 += b.nrows();
    }
    out
}

impl<T: Scalar> ReluNetwork<T> {
    /// Validates shapes and rejects non-finite parameters.
    pub fn new(input_dim: usize, layers: Vec<Layer<T>>, w_out: DMatrix<T>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::domain("input dimension must be positive"));
        }
        let mut prev = input_dim;
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.ncols() != prev {
                return Err(Error::domain(format!(
                    "layer {} expects {} inputs, previous layer has {prev}",
                    l + 1,
                    layer.weights.ncols()
                )));
            }
            if layer.weights.nrows() != layer.shift.len() {
                return Err(Error::domain(format!(
                    "layer {} shift length mismatch",
                    l + 1
                )));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.shift)
                .any(|v| !v.is_finite())
            {
                return Err(Error::domain(format!(
                    "layer {} has non-finite parameters",
                    l + 1
                )));
            }
            prev = layer.weights.nrows();
        }
        if w_out.ncols() != prev {
            return Err(Error::domain(format!(
                "output matrix expects {} inputs, last layer has {prev}",
                w_out.ncols()
            )));
        }
        if w_out.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("output matrix has non-finite entries"));
        }
        Ok(ReluNetwork {
            input_dim,
            layers,
            w_out,
            plan: OnceLock::new(),
        })
    }

    /// `L = 0` network computing `x ↦ x`.
    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), DMatrix::identity(dim, dim))
    }

    /// `L = 0` network computing `x ↦ A x`.
    pub fn affine(a: DMatrix<T>) -> Result<Self> {
        Self::new(a.ncols(), Vec::new(), a)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn output_weights(&self) -> &DMatrix<T> {
        &self.w_out
    }

    pub fn architecture(&self) -> Architecture {
        let widths: Vec<usize> = self.layers.iter().map(Layer::width).collect();
        Architecture {
            depth: widths.len(),
            max_width: widths.iter().copied().max().unwrap_or(0),
            widths,
        }
    }

    /// Number of nonzero weights over all layers, including the output matrix.
    pub fn nonzero_weights(&self) -> usize {
        let plan = self.plan();
        plan.hidden.iter().map(|(s, _)| s.vals.len()).sum::<usize>() + plan.output.vals.len()
    }

    fn plan(&self) -> &Plan<T> {
        self.plan.get_or_init(|| {
            let hidden: Vec<_> = self
                .layers
                .iter()
                .map(|l| (SparseRows::from_dense(&l.weights), l.shift.clone()))
                .collect();
            let max_width = self
                .layers
                .iter()
                .map(Layer::width)
                .chain([self.input_dim, self.output_dim()])
                .max()
                .unwrap_or(1);
            Plan {
                hidden,
                output: SparseRows::from_dense(&self.w_out),
                max_width,
            }
        })
    }

    /// Forward pass at one point.
    pub fn evaluate(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim {
            return Err(Error::domain(format!(
                "expected an input of dimension {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        self.evaluate_flat(x)
    }

    /// Forward pass at many points stored row-major (`n × input_dim`);
    /// returns the outputs row-major (`n × output_dim`).
    pub fn evaluate_flat(&self, xs: &[T]) -> Result<Vec<T>> {
        let p0 = self.input_dim;
        if xs.len() % p0 != 0 {
            return Err(Error::domain(format!(
                "input length {} is not a multiple of the input dimension {p0}",
                xs.len()
            )));
        }
        if xs.is_empty() {
            return Err(Error::domain(format!(
                "expected an input of dimension {p0}, got 0 values"
            )));
        }
        let n = xs.len() / p0;
        let plan = self.plan();
        let q = self.output_dim();
        let mut out = vec![T::zero(); n * q];
        let mut a = vec![T::zero(); plan.max_width * CHUNK];
        let mut b = vec![T::zero(); plan.max_width * CHUNK];
        for start in (0..n).step_by(CHUNK) {
            let used = CHUNK.min(n - start);
            for p in 0..used {
                for c in 0..p0 {
                    a[c * CHUNK + p] = xs[(start + p) * p0 + c];
                }
            }
            for (rows, shift) in &plan.hidden {
                rows.apply(&a, &mut b, CHUNK, used);
                for (r, &v) in shift.iter().enumerate() {
                    for y in &mut b[r * CHUNK..r * CHUNK + used] {
                        let z = *y - v;
                        *y = if z > T::zero() { z } else { T::zero() };
                    }
                }
                std::mem::swap(&mut a, &mut b);
            }
            plan.output.apply(&a, &mut b, CHUNK, used);
            for p in 0..used {
                for r in 0..q {
                    out[(start + p) * q + r] = b[r * CHUNK + p];
                }
            }
        }
        Ok(out)
    }

    /// Straight dense forward pass, kept as the reference semantics.
    pub fn evaluate_dense(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim {
            return Err(Error::domain(format!(
                "expected an input of dimension {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let mut y = x.to_vec();
        for layer in &self.layers {
            let w = &layer.weights;
            y = (0..w.nrows())
                .map(|r| {
                    let mut acc = T::zero();
                    for c in 0..w.ncols() {
                        acc = acc + w[(r, c)] * y[c];
                    }
                    (acc - layer.shift[r]).max(T::zero())
                })
                .collect();
        }
        Ok((0..self.w_out.nrows())
            .map(|r| {
                let mut acc = T::zero();
                for c in 0..self.w_out.ncols() {
                    acc = acc + self.w_out[(r, c)] * y[c];
                }
                acc
            })
            .collect())
    }

    /// Replaces the output matrix by `A · W_{L+1}`.
    pub fn map_output(&self, a: &DMatrix<T>) -> Result<Self> {
        if a.ncols() != self.output_dim() {
            return Err(Error::domain(format!(
                "output map expects {} inputs, network has {} outputs",
                a.ncols(),
                self.output_dim()
            )));
        }
        Self::new(self.input_dim, self.layers.clone(), mat_mul(a, &self.w_out))
    }

    /// Keeps only the listed outputs (in the given order).
    pub fn select_outputs(&self, rows: &[usize]) -> Result<Self> {
        let mut a = DMatrix::zeros(rows.len(), self.output_dim());
        for (r, &i) in rows.iter().enumerate() {
            if i >= self.output_dim() {
                return Err(Error::domain(format!("output {i} out of range")));
            }
            a[(r, i)] = T::one();
        }
        self.map_output(&a)
    }

    /// Drops hidden neurons whose outgoing weights are all zero.
    pub fn prune(&self) -> Self {
        let mut layers = self.layers.clone();
        let mut w_out = self.w_out.clone();
        for l in (0..layers.len()).rev() {
            let next: &DMatrix<T> = if l + 1 == layers.len() {
                &w_out
            } else {
                &layers[l + 1].weights
            };
            let keep: Vec<usize> = (0..layers[l].width())
                .filter(|&j| next.column(j).iter().any(|&v| v != T::zero()))
                .collect();
            if keep.len() == layers[l].width() {
                continue;
            }
            let keep = if keep.is_empty() { vec![0] } else { keep };
            let trimmed_next = next.select_columns(keep.iter());
            if l + 1 == layers.len() {
                w_out = trimmed_next;
            } else {
                layers[l + 1].weights = trimmed_next;
            }
            let cur = &layers[l];
            layers[l] = Layer {
                weights: cur.weights.select_rows(keep.iter()),
                shift: keep.iter().map(|&j| cur.shift[j]).collect(),
            };
        }
        ReluNetwork {
            input_dim: self.input_dim,
            layers,
            w_out,
            plan: OnceLock::new(),
        }
    }

    /// Adds a constant `bias` to the outputs through an extra neuron in the
    /// last hidden layer that always outputs 1 (zero weights, shift −1).
    pub fn with_output_bias(&self, bias: &[T]) -> Result<Self> {
        if bias.len() != self.output_dim() {
            return Err(Error::domain("bias length must equal the output dimension"));
        }
        let Some(last) = self.layers.last() else {
            return Err(Error::domain(
                "an output bias needs at least one hidden layer",
            ));
        };
        let p = last.width();
        let mut w = last.weights.clone().insert_row(p, T::zero());
        w.row_mut(p).fill(T::zero());
        let mut shift = last.shift.clone();
        shift.push(-T::one());
        let mut w_out = self.w_out.clone().insert_column(p, T::zero());
        for (r, &b) in bias.iter().enumerate() {
            w_out[(r, p)] = b;
        }
        let mut layers = self.layers.clone();
        *layers.last_mut().unwrap() = Layer { weights: w, shift };
        Self::new(self.input_dim, layers, w_out)
    }

    /// Converts all parameters to another floating-point type.
    pub fn cast<U: Scalar>(&self) -> ReluNetwork<U> {
        let conv = |m: &DMatrix<T>| m.map(|v| U::from_f64_lossy(v.to_f64_lossy()));
        ReluNetwork {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: conv(&l.weights),
                    shift: l
                        .shift
                        .iter()
                        .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                        .collect(),
                })
                .collect(),
            w_out: conv(&self.w_out),
            plan: OnceLock::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&NetRepr::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: NetRepr<T> = serde_json::from_str(s)?;
        repr.try_into()
    }
}

/// `outer ∘ inner`. The inner output matrix is fused into the first weight
/// matrix of `outer`, so depths add.
pub fn compose<T: Scalar>(
    outer: &ReluNetwork<T>,
    inner: &ReluNetwork<T>,
) -> Result<ReluNetwork<T>> {
    if outer.input_dim != inner.output_dim() {
        return Err(Error::domain(format!(
            "cannot compose: outer expects {} inputs, inner produces {}",
            outer.input_dim,
            inner.output_dim()
        )));
    }
    let mut layers = inner.layers.clone();
    let w_out = match outer.layers.split_first() {
        None => mat_mul(&outer.w_out, &inner.w_out),
        Some((first, rest)) => {
            layers.push(Layer {
                weights: mat_mul(&first.weights, &inner.w_out),
                shift: first.shift.clone(),
            });
            layers.extend(rest.iter().cloned());
            outer.w_out.clone()
        }
    };
    ReluNetwork::new(inner.input_dim, layers, w_out)
}

/// Side-by-side networks of equal depth. With `shared_input` every part reads
/// the same input; otherwise the inputs are concatenated. Outputs are always
/// concatenated.
pub fn parallel<T: Scalar>(nets: &[ReluNetwork<T>], shared_input: bool) -> Result<ReluNetwork<T>> {
    let Some(first) = nets.first() else {
        return Err(Error::domain("parallel needs at least one network"));
    };
    let depth = first.depth();
    if let Some(bad) = nets.iter().find(|n| n.depth() != depth) {
        return Err(Error::domain(format!(
            "parallel parts have depths {depth} and {}; pad the shallower ones with pad_depth",
            bad.depth()
        )));
    }
    if shared_input && nets.iter().any(|n| n.input_dim != first.input_dim) {
        return Err(Error::domain(
            "shared-input parts must have equal input dimensions",
        ));
    }
    let input_dim = if shared_input {
        first.input_dim
    } else {
        nets.iter().map(|n| n.input_dim).sum()
    };
    let stack = |ms: &[&DMatrix<T>], first_layer: bool| {
        if first_layer && shared_input {
            vstack(ms)
        } else {
            block_diag(ms)
        }
    };
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let ws: Vec<_> = nets.iter().map(|n| &n.layers[l].weights).collect();
        let shift = nets
            .iter()
            .flat_map(|n| n.layers[l].shift.iter().copied())
            .collect();
        layers.push(Layer {
            weights: stack(&ws, l == 0),
            shift,
        });
    }
    let outs: Vec<_> = nets.iter().map(|n| &n.w_out).collect();
    ReluNetwork::new(input_dim, layers, stack(&outs, depth == 0))
}

/// Deepens `net` to `target_depth` by forwarding its outputs through
/// identity-weight, zero-shift layers.
///
/// Exact on every input whose network outputs are nonnegative, since then
/// `σ(y) = y`. All constructions here forward values in `[0, 1]`.
pub fn pad_depth<T: Scalar>(net: &ReluNetwork<T>, target_depth: usize) -> Result<ReluNetwork<T>> {
    if target_depth < net.depth() {
        return Err(Error::domain(format!(
            "target depth {target_depth} is below the current depth {}",
            net.depth()
        )));
    }
    let extra = target_depth - net.depth();
    if extra == 0 {
        return Ok(net.clone());
    }
    let p = net.output_dim();
    let mut layers = net.layers.clone();
    layers.push(Layer {
        weights: net.w_out.clone(),
        shift: vec![T::zero(); p],
    });
    for _ in 1..extra {
        layers.push(Layer {
            weights: DMatrix::identity(p, p),
            shift: vec![T::zero(); p],
        });
    }
    ReluNetwork::new(net.input_dim, layers, DMatrix::identity(p, p))
}

pub fn architecture_of<T: Scalar>(net: &ReluNetwork<T>) -> Architecture {
    net.architecture()
}

pub fn evaluate<T: Scalar>(net: &ReluNetwork<T>, x: &[T]) -> Result<Vec<T>> {
    net.evaluate(x)
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct LayerRepr<T> {
    #[serde(rename = "W")]
    w: Vec<Vec<T>>,
    v: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct NetRepr<T> {
    input_dim: usize,
    layers: Vec<LayerRepr<T>>,
    #[serde(rename = "W_out")]
    w_out: Vec<Vec<T>>,
}

fn rows_of<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows<T: Scalar>(rows: &[Vec<T>], ncols: usize) -> Result<DMatrix<T>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::domain(format!(
            "ragged weight matrix, expected {ncols} columns"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl<T: Scalar> From<&ReluNetwork<T>> for NetRepr<T> {
    fn from(net: &ReluNetwork<T>) -> Self {
        NetRepr {
            input_dim: net.input_dim,
            layers: net
                .layers
                .iter()
                .map(|l| LayerRepr {
                    w: rows_of(&l.weights),
                    v: l.shift.clone(),
                })
                .collect(),
            w_out: rows_of(&net.w_out),
        }
    }
}

impl<T: Scalar> TryFrom<NetRepr<T>> for ReluNetwork<T> {
    type Error = Error;

    fn try_from(repr: NetRepr<T>) -> Result<Self> {
        let mut prev = repr.input_dim;
        let mut layers = Vec::with_capacity(repr.layers.len());
        for l in &repr.layers {
            let w = from_rows(&l.w, prev)?;
            prev = w.nrows();
            layers.push(Layer::new(w, l.v.clone())?);
        }
        let w_out = from_rows(&repr.w_out, prev)?;
        ReluNetwork::new(repr.input_dim, layers, w_out)
    }
}

impl<T: Scalar> Serialize for ReluNetwork<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetRepr::from(self).serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for ReluNetwork<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = NetRepr::<T>::deserialize(d)?;
        repr.try_into().map_err(serde::de::Error::custom)
    }
}
