//! Dirac and Schrödinger operators on noncompact metric graphs: spectra,
//! nonlinear bound states and the nonrelativistic limit.

// `!(a < b)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod cli;
pub mod dirac_op;
pub mod discretize;
pub mod error;
pub mod graph;
pub mod limit;
pub mod linalg;
pub mod newton;
pub mod nld;
pub mod nls;
pub mod spectrum;

pub use error::{Error, Result};
