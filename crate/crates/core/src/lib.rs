//! PUGAN: underwater image enhancement with a physical-model-guided generator.
//!
//! The generator first estimates the parameters of the underwater imaging
//! model (attenuation, depth, transmission) and inverts it to obtain a
//! colour-corrected image. A two-stream encoder-decoder then refines the
//! result, using degradation quantization to weight the encoder features
//! toward badly degraded regions. Training is adversarial against a pair of
//! patch discriminators, one judging style and one judging content with
//! the help of an estimated depth map.

pub mod data;
pub mod discriminators;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod par_subnet;
pub mod physics;
pub mod trainer;
pub mod tsie;

pub use error::{Error, ErrorKind, Result};
