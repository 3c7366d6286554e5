//! Numerical core for discrete branching Markov processes on finite
//! configuration spaces.
//!
//! A particle moves through a base state space, is killed at a bounded
//! state-dependent rate, and is replaced by a random litter of offspring.
//! This crate provides the deterministic solvers and the stochastic engine
//! for that picture:
//!
//! * [`config_space`]: finite configurations (multisets of points) and the
//!   multiplicative / linear / exponential functionals evaluated on them;
//! * [`mechanism`]: offspring laws, their action on test functions, and the
//!   mean-offspring constants;
//! * [`base_process`]: three concrete base motions (single site, finite-state
//!   chain, Brownian motion on a torus) with plain and killed semigroup
//!   action plus path sampling;
//! * [`nonlinear`]: the Picard solver for the branching evolution equation,
//!   producing the nonlinear semigroup `H_t` and its cumulant `V_t`;
//! * [`linear`]: the perturbed linear semigroup `Q_t` (Picard and
//!   Feynman–Kac routes) and the first-moment operator;
//! * [`engine`]: the replica-parallel branching particle simulator;
//! * [`superprocess`]: continuous-state branching: cumulant equation,
//!   scaled particle approximation, and discrete branching over
//!   measure-valued particles.
//!
//! The crate is `no_std` (with `alloc`); float transcendentals come from
//! `libm`. All randomness flows through [`stream::SeededStream`], a
//! splittable counter-based generator, so every simulation is reproducible
//! from a single master seed independent of scheduling.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is the NaN-rejecting form of the positivity checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod base_process;
pub mod config_space;
mod duhamel;
pub mod engine;
pub mod error;
pub mod linear;
pub mod mechanism;
pub mod mesh;
pub mod nonlinear;
pub mod num;
pub mod stream;
pub mod superprocess;

pub use base_process::BaseModel;
pub use config_space::{Configuration, Domain, Point, ScalarField};
pub use engine::{Estimate, Functional};
pub use error::{CoreError, Result};
pub use mechanism::{Displacement, MechanismConstants, OffspringLaw};
pub use mesh::{SemigroupTable, SolverMesh, TableKind};
pub use stream::SeededStream;

/// Slack used when checking that a function claimed to lie in the unit
/// interval actually does; absorbs float rounding from upstream arithmetic.
pub(crate) const UNIT_RANGE_SLACK: f64 = 1e-12;
