//! Port-Hamiltonian models of nonholonomic mechanical systems, their
//! chained-form coordinate changes, and a discontinuous energy-shaping
//! controller that stabilises them to the origin.
//!
//! The pipeline is:
//!
//! 1. describe the constrained model with [`ConstrainedPHSystem`];
//! 2. eliminate the multipliers with [`reduce`] to get a [`ReducedPHSystem`];
//! 3. move to chained coordinates with a [`CoordinateChart`] and wrap the
//!    result in a [`ChainedSystem`];
//! 4. drive it with [`control_z`] inside [`run_closed_loop`].
//!
//! The car-like vehicle in [`car`] is a complete worked example.

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod car;
pub mod chained;
pub mod controller;
pub mod error;
pub mod linalg;
pub mod ph;
pub mod sim;
pub mod verify;

pub use chained::{
    chained_form_q, is_chained, pushforward, qz_perp, s_matrix, ChainedSystem, CoordinateChart,
    RationalMatrix, WChart,
};
pub use controller::{
    control_w, control_w_from_velocity, control_z, mass_matrix_independence_check,
    shaped_hamiltonian, ControllerParams, ShapedEnergy,
};
pub use error::{Error, Result};
pub use ph::{
    coriolis_matrix, reduce, ConstrainedPHSystem, Matrix, MatrixMap, MomentumSplit,
    ReducedPHSystem, StateDerivative, Vector,
};
pub use sim::{run_closed_loop, run_open_loop, RunStatus, SimConfig, TrajectoryRecord};
