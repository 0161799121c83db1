//! Dynamic batch training for segmentation models.
//!
//! Batches whose loss stays high are trained more often than easy ones, and
//! the per-batch train counts double as a hard-sample and outlier signal.
//! The crate also carries the focal-loss family used for training, Dice and
//! HD95 evaluation, a synthetic corpus generator, and a small reference
//! network with hand-written gradients.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod report;
pub mod scheduler;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
