//! ContourDiff: contour-guided diffusion for unpaired cross-domain image
//! translation, with spatially coherent volume inference, a synthetic
//! phantom data generator, and a downstream-segmentation evaluation harness.

pub mod cli;
pub mod dataio;
pub mod diffusion;
pub mod error;
pub mod imageproc;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod scgd;
pub mod segharness;

pub use error::{Error, Result};
