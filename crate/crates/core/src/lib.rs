// Guards such as `!(x > 0.0)` deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod nn;
pub mod params;

pub use error::{Error, Result};
pub use exec::Exec;
pub mod classifier;
pub mod config;
pub mod contrast;
pub mod dataset;
pub mod encoders;
pub mod evidence;
pub mod forgery;
pub mod fusion;
pub mod image;
pub mod model;
pub mod train;
