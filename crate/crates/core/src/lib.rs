// NaN-rejecting guards are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod potential;
pub mod quadrature;

pub use error::{Error, Result};
pub mod cell;
pub mod energy;
pub mod field;
pub mod geodesic;
pub mod grid;
pub mod optim;
pub mod recovery;
