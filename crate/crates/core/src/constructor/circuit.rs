//! Layer-by-layer builder for the larger constructions.
//!
//! Values are tracked as affine forms over the neurons of the most recent
//! layer. Pushing a layer turns each form `ℓ` into a neuron `σ(ℓ)`; the
//! constant of `ℓ` becomes the neuron's shift. Composing stages this way fuses
//! every affine map between activations, so the depth of a stage is exactly
//! its number of activation layers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::relunet::{Layer, ReluNetwork};

/// Affine form `Σ w_j y_j + c` over the current layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Lin {
    terms: Vec<(usize, f64)>,
    c: f64,
}

impl Lin {
    pub fn var(j: usize) -> Self {
        Lin {
            terms: vec![(j, 1.0)],
            c: 0.0,
        }
    }

    #[cfg(test)]
    pub fn constant(c: f64) -> Self {
        Lin {
            terms: Vec::new(),
            c,
        }
    }

    /// `Σ_r a_r ℓ_r + c`.
    pub fn combine(parts: &[(f64, &Lin)], c: f64) -> Self {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        let mut constant = c;
        for &(a, lin) in parts {
            constant += a * lin.c;
            terms.extend(lin.terms.iter().map(|&(j, w)| (j, a * w)));
        }
        terms.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (j, w) in terms {
            match merged.last_mut() {
                Some((last, acc)) if *last == j => *acc += w,
                _ => merged.push((j, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        Lin {
            terms: merged,
            c: constant,
        }
    }

    pub fn plus(&self, c: f64) -> Self {
        Lin {
            terms: self.terms.clone(),
            c: self.c + c,
        }
    }
}

pub(crate) struct Circuit {
    input_dim: usize,
    width: usize,
    layers: Vec<Layer<f64>>,
}

impl Circuit {
    pub fn new(input_dim: usize) -> Self {
        Circuit {
            input_dim,
            width: input_dim,
            layers: Vec::new(),
        }
    }

    pub fn inputs(&self) -> Vec<Lin> {
        (0..self.input_dim).map(Lin::var).collect()
    }

    /// Appends the layer `σ(ℓ_1), …, σ(ℓ_p)` and returns the new neurons.
    pub fn push(&mut self, forms: &[Lin]) -> Vec<Lin> {
        let mut w = DMatrix::zeros(forms.len(), self.width);
        let mut shift = Vec::with_capacity(forms.len());
        for (r, f) in forms.iter().enumerate() {
            for &(j, v) in &f.terms {
                w[(r, j)] += v;
            }
            shift.push(-f.c);
        }
        self.layers.push(Layer { weights: w, shift });
        self.width = forms.len();
        (0..forms.len()).map(Lin::var).collect()
    }

    /// Closes the circuit with the output matrix given by `outputs`, which
    /// must be linear (no constant term).
    pub fn finish(self, outputs: &[Lin]) -> Result<ReluNetwork> {
        let mut w = DMatrix::zeros(outputs.len(), self.width);
        for (r, f) in outputs.iter().enumerate() {
            if f.c != 0.0 {
                return Err(Error::Numerical(format!(
                    "output {r} has constant term {}; route constants through a neuron",
                    f.c
                )));
            }
            for &(j, v) in &f.terms {
                w[(r, j)] += v;
            }
        }
        ReluNetwork::new(self.input_dim, self.layers, w)
    }
}

/// Square approximations of `inputs` run side by side, with `rails` carried
/// through unchanged. Every input and rail must take values in `[0, 1]`.
///
/// Uses `2m` layers alternating between widths 4 and 2 per input:
/// `[σ(G), σ(G-½), σ(G-1), σ(f_{s-1})]` then `[σ(g_s), σ(f_{s-1})]`, where
/// `g_s` is the `s`-fold sawtooth and `f_s(x) = x - Σ_{r≤s} g_r(x)/4^r`.
pub(crate) fn sq_stage(
    c: &mut Circuit,
    inputs: &[Lin],
    rails: &[Lin],
    m: usize,
) -> (Vec<Lin>, Vec<Lin>) {
    let n = inputs.len();
    // current teeth value G and current interpolant F, as forms
    let mut teeth: Vec<Lin> = inputs.to_vec();
    let mut interp: Vec<Lin> = inputs.to_vec();
    let mut rails: Vec<Lin> = rails.to_vec();
    for s in 1..=m {
        let scale = 0.25f64.powi(s as i32 - 1);
        let mut forms = Vec::with_capacity(4 * n + rails.len());
        for r in 0..n {
            let g = &teeth[r];
            forms.push(g.clone());
            forms.push(g.plus(-0.5));
            forms.push(g.plus(-1.0));
            forms.push(if s == 1 {
                interp[r].clone()
            } else {
                Lin::combine(&[(1.0, &interp[r]), (-scale, g)], 0.0)
            });
        }
        forms.extend(rails.iter().cloned());
        let vars = c.push(&forms);
        let mut forms = Vec::with_capacity(2 * n + rails.len());
        for r in 0..n {
            let v = &vars[4 * r..4 * r + 4];
            forms.push(Lin::combine(
                &[(2.0, &v[0]), (-4.0, &v[1]), (2.0, &v[2])],
                0.0,
            ));
            forms.push(v[3].clone());
        }
        forms.extend(vars[4 * n..].iter().cloned());
        let vars = c.push(&forms);
        for r in 0..n {
            teeth[r] = vars[2 * r].clone();
            interp[r] = vars[2 * r + 1].clone();
        }
        rails = vars[2 * n..].to_vec();
    }
    let last = 0.25f64.powi(m as i32);
    let squares = (0..n)
        .map(|r| Lin::combine(&[(1.0, &interp[r]), (-last, &teeth[r])], 0.0))
        .collect();
    (squares, rails)
}

/// Normalised product `×₂(u, v) = (2SQ((u+v)/2) - SQ(u)/2 - SQ(v)/2 + 4^{-m}) / (1 + 2·4^{-m})`
/// as a form over the square outputs.
pub(crate) fn prod2_form(sq_mid: &Lin, sq_u: &Lin, sq_v: &Lin, m: usize) -> Lin {
    let eps = 0.25f64.powi(m as i32);
    let norm = 1.0 / (1.0 + 2.0 * eps);
    Lin::combine(
        &[
            (2.0 * norm, sq_mid),
            (-0.5 * norm, sq_u),
            (-0.5 * norm, sq_v),
        ],
        eps * norm,
    )
}

/// Products of many pairs of `values`, sharing one square per distinct value.
///
/// Pushes a pairing layer `σ(values), σ(midpoints)` and a square stage
/// (`2m + 1` layers in total) and returns, over the final square layer, one
/// `×₂` form per pair plus the carried rails. The caller adds the combining
/// layer, usually fused with further arithmetic.
pub(crate) fn shared_products(
    c: &mut Circuit,
    values: &[Lin],
    pairs: &[(usize, usize)],
    rails: &[Lin],
    m: usize,
) -> (Vec<Lin>, Vec<Lin>) {
    let mut forms: Vec<Lin> = values.to_vec();
    forms.extend(
        pairs
            .iter()
            .map(|&(a, b)| Lin::combine(&[(0.5, &values[a]), (0.5, &values[b])], 0.0)),
    );
    forms.extend(rails.iter().cloned());
    let vars = c.push(&forms);
    let nsq = values.len() + pairs.len();
    let (squares, rails) = sq_stage(c, &vars[..nsq], &vars[nsq..], m);
    let nv = values.len();
    let products = pairs
        .iter()
        .enumerate()
        .map(|(p, &(a, b))| prod2_form(&squares[nv + p], &squares[a], &squares[b], m))
        .collect();
    (products, rails)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combine_merges_terms() {
        let a = Lin::combine(&[(1.0, &Lin::var(2)), (2.0, &Lin::var(0))], 1.0);
        let b = Lin::combine(&[(1.0, &a), (-1.0, &Lin::var(2))], 0.5);
        assert_eq!(
            b,
            Lin {
                terms: vec![(0, 2.0)],
                c: 1.5
            }
        );
    }

    #[test]
    fn constant_neuron_and_finish() {
        let mut c = Circuit::new(1);
        let x = c.inputs();
        let v = c.push(&[x[0].plus(-0.5), Lin::constant(1.0)]);
        let net = c
            .finish(&[Lin::combine(&[(1.0, &v[0]), (3.0, &v[1])], 0.0)])
            .unwrap();
        assert_eq!(net.evaluate(&[0.75]).unwrap(), vec![3.25]);
        assert_eq!(net.evaluate(&[0.25]).unwrap(), vec![3.0]);
        let c = Circuit::new(1);
        assert!(c.finish(&[Lin::constant(1.0)]).is_err());
    }
}
