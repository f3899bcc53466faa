//! Build, evaluate, and analyze ensembles of multi-label video
//! classifiers.
//!
//! The pipeline runs desk-scale end to end: synthesize a labelled corpus
//! of frame features ([`synth`]), pool frames into fixed-size vectors
//! ([`pooling`]), train small MLP classifiers ([`mlp`]), combine them
//! ([`ensemble`]), score them with global average precision ([`metrics`]),
//! and quantify how prediction diversity relates to ensembling gains
//! ([`diversity`]). [`io`] gives every artifact a file format.

pub mod diversity;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mlp;
pub mod pooling;
pub mod synth;
pub mod types;
mod util;

pub use error::{Error, Result};
