#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod benchmark;
pub mod cli;
pub mod denoise;
pub mod error;
pub mod events;
pub mod fsio;
pub mod kv;
pub mod metrics;
pub mod net;
pub mod sampling;
pub mod serialize;
pub mod sscan;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
