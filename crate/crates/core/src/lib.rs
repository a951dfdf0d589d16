//! Bilingual visually grounded sentence ranking.
//!
//! Images (precomputed feature vectors) and captions in several languages are
//! embedded into one joint space by a linear image encoder and a GRU sentence
//! encoder with a shared vocabulary. Models are trained with hinge ranking
//! losses over image–caption and caption–caption pairs, can be extended with
//! pseudopairs mined from their own sentence similarities or with translated
//! captions, and are scored with recall@K retrieval metrics.

pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grad;
pub mod loss;
pub mod pseudopairs;
pub mod train;

pub use error::{Error, Result};
