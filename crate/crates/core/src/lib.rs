// Validation uses `!(x > 0.0)` deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod heads;
pub mod html;
pub mod metrics;
pub mod model;
pub mod params;
pub mod training;
