//! Finite elements for gradient-constrained variational problems.
//!
//! The library solves the elasto-plastic-torsion-type minimization of the
//! Dirichlet energy under a pointwise gradient bound by maximizing its
//! Fenchel dual over lowest-order Raviart-Thomas fields with a semi-implicit
//! L²-gradient flow, reconstructs the Crouzeix-Raviart primal solution in
//! closed form from the dual one, and evaluates primal-dual gap error
//! identities together with convergence-rate studies.
//!
//! Entry points:
//! - [`mesh::disk::build_disk_mesh`] / [`mesh::io`] for triangulations,
//! - [`dual_solver::run_flow`] for the dual solve,
//! - [`duality::marini_reconstruct`] for the primal reconstruction,
//! - [`duality::discrete_gap_estimator`] and
//!   [`duality::discrete_convexity_measures`] for the error identities,
//! - [`experiments::run_apriori_study`] / [`experiments::run_aposteriori_study`]
//!   for the rate studies,
//! - [`cli::run_cli`] for the command-line interface.

pub mod cli;
pub mod dual_solver;
pub mod duality;
pub mod energy;
pub mod error;
pub mod experiments;
mod fsutil;
pub mod geometry;
pub mod mesh;
pub mod spaces;

pub use error::{Error, Result};
pub use geometry::{Mat2, Vec2};
