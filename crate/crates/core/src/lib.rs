//! Higher-order Galerkin variational integrators for kinematic trees.
//!
//! Residuals of the discrete Euler-Lagrange equations are evaluated in
//! `O(sn)`, exact Newton directions are computed in `O(s³n)` and the
//! linearization is assembled in `O(s²n²)`. Dense finite-difference
//! references live in [`oracle`].

#![allow(clippy::needless_range_loop)]

pub mod constraint;
pub mod del;
pub mod error;
pub mod galerkin;
pub mod linearize;
pub mod model;
pub mod newton;
pub mod oracle;
pub mod sample;
pub mod se3;
pub mod study;

pub use del::{evaluate_del, DelOutput, DelProblem, DiscreteState, ForceModel};
pub use error::{Error, Result};
pub use galerkin::GalerkinScheme;
pub use model::MechanismModel;
pub use newton::{newton_direction, step, Integrator, SolverConfig};

