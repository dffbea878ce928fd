//! Feature selection read as two-part compression: a watermarked colored
//! digit benchmark, small MLPs, prequential codelengths and the lower
//! envelope of compression lines.

pub mod analytic;
pub mod dataio;
pub mod envelope;
pub mod error;
pub mod metrics;
pub mod nnet;
pub mod prequential;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod taskgen;

pub use error::{Error, IdxError, Result};
pub use taskgen::{Dataset, Feature, TaskConfig};
