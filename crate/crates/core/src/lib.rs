//! Slotted-time simulator of multi-user wireless delivery of layered (SVC)
//! video, with the streamloading scheduler and quality selector, the
//! streaming/downloading baselines, proportional-fair and rate-matching
//! variants, and a brute-force offline oracle for tiny instances.

// `!(x > 0.0)` is how parameter checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod client;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod oracle;
pub mod scheduler;
pub mod video;

pub use error::{Error, Result};
