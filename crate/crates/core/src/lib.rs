//! Symmetry-reduced Ricci flow coupled to a scalar harmonic map flow on T^n,
//! conjugate heat kernels along the flow and numerical checks of the Harnack,
//! entropy, reduced distance and Sobolev kernel estimates.

// `!(x <= tol)` is used on purpose so that NaN fails
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod config;
pub mod entropy;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod harnack;
pub mod heat;
pub mod lgeodesic;
pub mod pipeline;
pub mod report;
pub mod sobolev;

pub use error::{Error, Result};
