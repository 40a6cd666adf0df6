//! Occupation-time fields of continuous-time random interlacements on Z^d:
//! lattice Green functions and capacities, gauge functions and Laplace
//! functionals, exact window sampling, Dirichlet-form rate functions and
//! disconnection experiments.

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod deviation;
pub mod error;
pub mod geometry;
pub mod green;
pub mod lattice;
pub mod sim;
pub(crate) mod solver;
pub mod stats;
pub mod variational;

pub use error::{Error, Result};
