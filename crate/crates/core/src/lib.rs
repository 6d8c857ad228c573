//! Breakaway strategy optimization for road cycling.
//!
//! The crate models a rider drafting inside a peloton who may attack at some
//! point along the course. Everything is expressed in dimensionless units in
//! which the course has unit length and the peloton, riding at unit power on a
//! flat road, finishes in unit time.
//!
//! Modules:
//!
//! * [`model`] - scalings, position-dependent drag, quasi-steady speed law and
//!   energy accounting.
//! * [`crash`] - backward-propagating crash involvement model, exposure
//!   integrals and a Monte Carlo estimator.
//! * [`flat`] - closed-form analysis of a constant-power attack on a flat
//!   course and the risk-weighted optimum.
//! * [`fatigue`] - attack power decaying toward a sustainable floor, solved by
//!   nested numerical optimization.
//! * [`terrain`] - race simulation over arbitrary elevation profiles.
//! * [`micro`] - two-timescale description of the attack onset.
//! * [`numerics`] - root finding, quadrature, ODE integration, scalar
//!   minimization and a depressed-cubic solver.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crash;
pub mod error;
pub mod fatigue;
pub mod flat;
pub mod micro;
pub mod model;
pub mod numerics;
pub mod terrain;

pub use error::{Error, Result};
