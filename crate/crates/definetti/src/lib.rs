//! Solver for a dividend-rate control problem on a drifted Brownian surplus
//! with a concave state-dependent cap on the payout rate.
//!
//! The optimal policy is a bang-bang barrier rule: pay at the maximal rate
//! `F(U)` above a barrier, pay nothing below it. The crate computes the
//! fundamental functions (the scale-type function `psi`, the decreasing
//! solution `phi_F`, the discounted-rate functional `I_F`), the optimal
//! barrier and value function, and cross-validates the result three ways:
//! closed forms for affine and capped-linear bounds, an independent
//! finite-difference ODE engine for arbitrary concave bounds, and Monte Carlo
//! simulation of the controlled diffusion.
//!
//! Modules
//! - [`model`]: parameters and the concave bound family.
//! - [`closed_forms`]: psi, the parabolic cylinder function, passage
//!   transforms and the affine / capped-linear closed forms.
//! - [`ode_engine`]: two-point boundary-value solves for `phi_F` and `I_F`.
//! - [`optimizer`]: regime test, barrier root-finding and value assembly.
//! - [`mc_sim`]: reproducible Euler-Maruyama estimators.
//! - [`verifier`]: residual, regularity and dominance checks on a solved
//!   policy.
//! - [`cli`]: config-file driven front end (`solve`, `verify`, `simulate`,
//!   `compare`).

pub mod cli;
pub mod closed_forms;
pub mod error;
pub mod mc_sim;
pub mod model;
pub mod numerics;
pub mod ode_engine;
pub mod optimizer;
pub mod verifier;

pub use error::{Error, Result};
pub use model::{BoundFn, ModelParams};
