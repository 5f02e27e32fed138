//! Distributionally robust safe-stabilizing control synthesis.
//!
//! Given a control-affine system with sampled model uncertainty, this crate
//! builds the CVaR-constrained, Wasserstein-robust min-norm synthesis problem
//! as a second-order cone program, solves it with a self-contained primal-dual
//! interior-point method, and certifies feasibility or infeasibility with
//! three checks that are far cheaper than the solve itself.

pub mod dro;
pub mod feasibility;
pub mod model;
pub mod numerics;
pub mod regularity;
pub mod sim;
pub mod socp;

#[cfg(doctest)]
mod booktests;
