//! Core library: a constrained GAN that maps a reference population's
//! feature distribution onto a patient population's under a continuous
//! latent severity vector, plus everything needed to validate it end to
//! end — semi-synthetic cohort generation, preprocessing, training,
//! inference of per-subject severity indices, and concordance-based
//! evaluation with agreement-driven model selection.
//!
//! All arithmetic is 64-bit floating point and every random path is
//! driven by an explicit seed, so identical configurations reproduce
//! identical artifacts bit for bit.

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod losses;
pub mod mat;
pub mod metrics;
pub mod neural;
pub mod preprocess;
pub mod synthdata;
pub mod networks;
pub mod training;

pub use error::{Error, Result};
pub use mat::Mat;
