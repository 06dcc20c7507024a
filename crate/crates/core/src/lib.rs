// `!(x > 0.0)` guards deliberately reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod env;
pub mod error;
pub mod harness;
pub mod huber;
pub mod linalg;
pub mod lotus;
pub mod lowto;
pub mod sim;

pub use error::{Error, Result};
