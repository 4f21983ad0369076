//! Wavelet confidence bands for the invariant density and the drift of
//! ergodic Markov chains and scalar diffusions observed at low frequency.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod density;
pub mod drift;
pub mod error;
pub mod experiment;
pub mod simulate;
pub mod variance;
pub mod wavelet;

pub use error::{Error, Result};
