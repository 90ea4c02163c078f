//! Tensor-product B-spline regression compiled into explicitly constructed
//! ReLU networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`splines`]: knot grids, univariate/tensor B-splines and the truncated
//!   power basis used by the additive model.
//! - [`relunet`]: dense ReLU networks `W_{L+1} σ_{v_L} W_L … σ_{v_1} W_1 x`,
//!   their evaluation and structural combinators.
//! - [`constructor`]: the sawtooth, square, product and B-spline networks,
//!   each paired with an analytic sup-norm error bound.
//! - [`certify`]: dense-grid certification of those bounds.
//! - [`estimator`]: least-squares pilot fits (tensor and additive) and their
//!   network counterparts.
//! - [`inference`]: pointwise confidence intervals and the normalised
//!   goodness-of-fit test.
//!
//! Spline and network code is generic over the floating-point type through
//! [`Scalar`]; the estimators and the certified constructions run in `f64`.

pub mod certify;
pub mod constructor;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod relunet;
pub mod scalar;
pub mod splines;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision knot grid, the only certified configuration.
pub type KnotGrid = splines::KnotGrid<f64>;
/// Single-precision knot grid.
pub type KnotGridF32 = splines::KnotGrid<f32>;
/// Double-precision truncated power basis.
pub type TruncatedPowerBasis = splines::TruncatedPowerBasis<f64>;
/// Double-precision ReLU network.
pub type ReluNetwork = relunet::ReluNetwork<f64>;
/// Single-precision ReLU network, obtained with [`relunet::ReluNetwork::cast`].
pub type ReluNetworkF32 = relunet::ReluNetwork<f32>;

pub use constructor::CertifiedNet;
pub use estimator::{AdditiveFit, Dataset, PilotFit};
pub use inference::{PointwiseInterval, TestResult};
pub use relunet::Architecture;
pub use splines::TensorIndexSet;
