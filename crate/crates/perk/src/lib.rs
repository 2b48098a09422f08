//! Paired explicit Runge-Kutta (P-ERK) multirate time integration on 1D
//! finite-volume testbeds.
//!
//! The crate covers the whole pipeline: spectrum estimation of the
//! semidiscretization, stability polynomial optimization, construction of
//! two-register Butcher tableaus with stage-activity masks, partitioned
//! time stepping with adaptive mesh refinement, fully-discrete stability and
//! monotonicity analysis, and an RHS-evaluation cost model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod analysis;
pub mod error;
pub mod multirate;
pub mod spectra;
pub mod stabpoly;
pub mod tableau;
pub mod testbed;

pub use error::{PerkError, Result};
pub use num_complex::Complex64;
