//! Online feedback optimization for power grids.
//!
//! The crate is organised along the control loop:
//!
//! - [`grid_case`]: static network data, case-file parsing and the tap lattice;
//! - [`power_flow`]: the steady-state plant (Newton–Raphson AC power flow and
//!   the local tap-changer settle loop) producing `y = h(u, d)`;
//! - [`sensitivity`]: `∇ᵤh` by the implicit function theorem, with a
//!   finite-difference oracle;
//! - [`miqp`]: the per-step projection problem, solved by an active-set QP
//!   inside best-first branch and bound;
//! - [`ofo`]: the controller assembling and applying the projection step;
//! - [`harness`]: closed-loop runs, baselines, the offline oracle and metrics.

pub mod fixtures;
pub mod grid_case;
pub mod power_flow;
pub mod sensitivity;
pub mod miqp;
pub mod ofo;
pub mod harness;
