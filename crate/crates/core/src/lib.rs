//! Constrained differential-kinematics control of two serial manipulators
//! whose instruments pierce a rotatable spherical body, plus a headless
//! simulator and manipulability analysis on top of it.
//!
//! Layers, bottom up:
//! - [`quat`]: quaternion algebra and the Hamilton/cross operators.
//! - [`kinematics`]: DH chains, forward kinematics, translation/rotation
//!   Jacobians.
//! - [`vfi`]: distance primitives and vector-field-inequality rows.
//! - [`orbital`]: sliding-RCM geometry, its Jacobian chain, band and
//!   rotation-limit rows.
//! - [`qp`]: the per-cycle quadratic program and its dense active-set solver.
//! - [`sim`]: scene loading, the control loop, trajectories, CSV logs.
//! - [`analysis`]: manipulability measures and the grid comparison study.

pub mod analysis;
mod error;
pub mod kinematics;
pub mod orbital;
pub mod qp;
pub mod quat;
pub mod sim;
pub mod verify;
pub mod vfi;

pub use error::{Error, Result};
