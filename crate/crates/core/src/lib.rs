//! Nonholonomic Newmark integrators for mechanical systems with linear
//! velocity constraints `μ(q)·v = 0`.
//!
//! The crate is organised bottom-up:
//!
//! * [`mechanics`] holds the system description and the continuous equations.
//! * [`newmark`] has the classical (unconstrained) Newmark family and an RK4
//!   baseline for the constrained flow.
//! * [`nh_newmark`] is the constrained method `F^{β,β′,α}` and its step solver.
//! * [`composition`] builds adjoints, compositions and the triple jump.
//! * [`catalog`] has the three benchmark systems.
//! * [`harness`] runs experiments and writes CSV.

pub mod catalog;
pub mod composition;
pub mod error;
pub mod harness;
pub mod mechanics;
pub mod newmark;
pub mod newton;
pub mod nh_newmark;

pub use composition::{adjoint, compose, psi, triple_jump, MethodHandle};
pub use error::{Error, Result};
pub use mechanics::{MechanicalSystem, State};
pub use nh_newmark::{Discretization, NewmarkParams, StepResult};
