//! Morse and Maslov indices of collision and escape solutions of the
//! Newtonian n-body problem.
//!
//! Central configurations and their spectra live in [`central`], the blown-up
//! flow in [`mcgehee`], linear Hamiltonian systems in [`hamiltonian`], the
//! crossing-form Maslov counter in [`maslov`], the homothetic pipelines in
//! [`homothetic`] and the finite-element cross-check in [`oracle`].

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod central;
pub mod error;
pub mod hamiltonian;
pub mod homothetic;
pub mod linalg;
pub mod maslov;
pub mod mcgehee;
pub mod nbody;
pub mod oracle;
pub mod problem;
pub mod ode;

pub use error::{Error, Result};
