#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod checks;
pub mod diffcore;
pub mod error;
pub mod estimators;
pub mod io;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod search;
pub mod supernet;

pub use error::{Error, Result};
