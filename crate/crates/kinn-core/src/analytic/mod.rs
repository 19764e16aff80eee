//! Continuous-time RC-cell dynamics, exact ZOH discretization, and analytic
//! cascade composition. Everything here is a pure function of immutable
//! inputs; this layer is the ground-truth oracle for the neural modules.

mod cascade;
mod cell;
mod ode;
mod poly;

pub use cascade::{
    cascade_ode_coeffs, cascade_transfer, discrete_cascade_impulse, erlang_kernel,
    readout_cascade_operator, readout_cascade_tf,
};
pub use cell::{convex_decomposition, zoh_step, CascadeSpec, ContinuousCell};
pub use ode::{measure_frequency_response, simulate_cell_ode, simulate_readout_cascade};
pub use poly::{Polynomial, RationalTF};
