//! Adjoint-based optimal control of interacting particle systems and their mean-field limit.
//!
//! The crate solves the `N`-particle control problem by gradient descent on the reduced cost,
//! computes adjoints in three formulations (backward particle ODE, Picard iteration along
//! characteristics, scalar adjoint in one dimension), and ships the experiments that check
//! stability bounds and the convergence of optimal controls as `N` grows.

pub mod adjoint;
pub mod config;
pub mod costs;
pub mod dynamics;
mod error;
pub mod gradient;
pub mod harness;
pub mod kernels;
pub mod model;
pub mod optimize;
pub mod quadrature;
pub mod wasserstein;

pub use error::{Error, Result};
