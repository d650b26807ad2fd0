//! Stationary mean field games on metric networks.
//!
//! The crate discretizes a network of segments with per-edge uniform grids,
//! assembles the Kirchhoff generator and its Fokker-Planck adjoint, solves
//! discounted and ergodic Hamilton-Jacobi-Bellman problems by policy
//! iteration, couples them through a damped fixed point, and checks the
//! resulting densities against Monte Carlo simulation of the network
//! diffusion.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coupling;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod io;
pub mod linalg;
pub mod mfg;
pub mod network;
pub mod operators;
pub mod oracle;
pub mod simulate;
pub mod solvers;
pub mod validate;

pub use error::{Error, Result};
