//! Multilinear sparse operators on periodic dyadic grids, and numerical
//! certification of the weighted norm inequalities they satisfy.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod cli;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod oscillation;
pub mod plot;
pub mod sparse;
pub mod weights;

pub use error::{Error, Result};
