//! Grounded video captioning: an attention LSTM decodes sentences over a
//! pool of spatio-temporal object proposals, and the attention weights
//! link each generated word to the proposal that explains it.

#![allow(clippy::needless_range_loop)]

pub mod attention;
pub mod captioner;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod lang;
pub mod metrics;
pub mod params;
pub mod proposals;
pub mod recurrent;
pub mod semantics;
pub mod tensor;

pub use error::{Error, Result};
