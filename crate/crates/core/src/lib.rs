//! Perpetual Learning Machine.
//!
//! Two dense networks hold a small set of memories between them: a
//! *storage* classifier (784-100-75) maps each of the first 75 MNIST digits
//! to its own arbitrary class, and a *recall* network (75-100-784) maps each
//! class back to its image. Once both are trained, the images can be
//! dropped: perpetual stochastic gradient descent keeps sampling classes,
//! recalling their images, and training both networks on what was recalled.
//! Biasing which classes are sampled makes memories that are rehearsed often
//! persist while rarely rehearsed ones fade.
//!
//! - [`nncore`]: dense layers, exact backprop, SGD, checkpoint encoding
//! - [`regularize`]: dither, inverted dropout, replica-averaged gradients
//! - [`data`]: IDX loading, normalization, the 25/25/25 group split, PGM export
//! - [`engine`]: the storage/recall pair, pretraining, PSGD, experiments
//! - [`harness`]: run configuration, CSV/SVG/manifest output, CLI plumbing

pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod nncore;
pub mod regularize;

pub use error::{PlmError, Result};
