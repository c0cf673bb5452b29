// `!(x > 0.0)` is used on purpose so that NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cocycle;
pub mod error;
pub mod geometry;
pub mod henon;
pub mod logscalar;
pub mod modelmap;
pub mod parameters;
pub mod report;
pub mod sequences;

pub use error::{Error, Result};
pub use logscalar::SignedLogReal;
pub use parameters::Params;
