//! Identification of port-Hamiltonian (pH) realizations from sampled
//! input/state/output data.
//!
//! The identified models satisfy a dissipation inequality for a prescribed
//! quadratic energy by construction, hence they are stable and passive
//! regardless of data quality.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod procrustes;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
