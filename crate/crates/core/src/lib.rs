//! Barrier and band policies for the singular control of drifted Brownian
//! motion reflected at the origin.
//!
//! The library solves the smooth-fit equation for single-barrier policies,
//! constructs the three-threshold band candidate by solving its smoothness
//! system, certifies the variational inequalities on a grid, and
//! cross-validates every analytic value function by Monte Carlo simulation
//! of the controlled reflected SDE.

pub mod band;
pub mod barrier;
pub mod cli;
pub mod config;
pub mod model;
pub mod sim;
pub mod verify;
