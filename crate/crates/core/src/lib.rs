//! Benchmark toolkit for machine unlearning on intent classification.
//!
//! The pipeline: generate a synthetic speaker-clustered dataset, train a
//! classifier, erase the influence of chosen speakers with one of eight
//! unlearning methods, and score the result against a gold model retrained
//! from scratch without those speakers.

pub mod clock;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod unlearn;

pub(crate) mod seeds;

pub use clock::{Clock, StepClock, WallClock};
pub use error::{Error, Result};
