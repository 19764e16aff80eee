//! Kirchhoff RC state-space dynamics and the Cascaded Kirchhoff Block.
//!
//! The crate has three layers:
//!
//! - [`analytic`] — continuous-time RC cells, exact zero-order-hold updates,
//!   and cascade composition (transfer functions, n-th-order ODE
//!   coefficients, impulse kernels). Pure math; the ground-truth oracle
//!   layer for everything else.
//! - [`knc`] / [`ckb`] — the selective discrete cell, the sequential scan,
//!   and the full cascaded block with 1/2/4-direction 2D scanning, all with
//!   hand-derived reverse-mode gradients validated against the
//!   finite-difference oracle in [`gradcheck`].
//! - [`poisson`] / [`model`] / [`train`] / [`sequence`] / [`ablation`] —
//!   the Poisson operator-learning benchmark with an exact spectral
//!   reference solver, the operator model, the training/evaluation/rollout
//!   harnesses, and the cascade-depth and scan-direction ablation drivers.
//!
//! All numerics are generic over [`Scalar`] (f32 or f64). f64 is the
//! verification precision: every oracle, gradient check, and acceptance
//! sweep runs there, and datasets are stored as little-endian f64.

pub mod ablation;
pub mod analytic;
pub mod ckb;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod knc;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod poisson;
pub mod scalar;
pub mod sequence;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Dense f64 array, the verification-precision value type.
pub type Tensor64 = Tensor<f64>;
/// Dense f32 array, the optional runtime precision.
pub type Tensor32 = Tensor<f32>;
/// f64 parameter tree (checkpoint format).
pub type ParamTree64 = params::ParamTree<f64>;
