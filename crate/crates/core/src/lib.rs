// The `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataio;
pub mod error;
pub mod health;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod rul;
pub mod seq2seq;
pub mod synth;

pub use error::{Error, Result};
