//! Leaf outline tracing, vein segmentation, trait extraction, and the
//! downstream statistics used to analyze scanned leaf images.

pub mod dense;
pub mod desk;
pub mod error;
pub mod grower;
pub mod imaging;
pub mod morphology;
pub mod nn;
pub mod stats;
pub mod tracer;
pub mod traits;

pub use error::{Error, Result};
