//! Hyperspectral seed classification toolkit.
//!
//! The crate is organised around the processing chain for one seed per
//! datacube:
//!
//! - [`hsdc`]: datacube container, normalisation, sum-of-squares image, on-disk format.
//! - [`synthgen`]: deterministic synthetic datasets of seed-shaped objects.
//! - [`features`]: texture, morphology and mean-spectrum features for SVM baselines.
//! - [`svm`]: RBF soft-margin SVM trained with SMO, one-vs-one multiclass.
//! - [`tensornet`]: hand-written CNN engine (conv, batch norm, Swish, residual blocks, Adam).
//! - [`training`]: splitting, augmentation and the training loop.
//! - [`analysis`]: softmax ensembling and gradient saliency maps.
//! - [`metrics`]: confusion matrices, top-k accuracy, macro P/R/F, repetition summaries.

pub mod analysis;
pub mod error;
pub mod features;
pub mod hsdc;
pub mod metrics;
pub mod rng;
pub mod svm;
pub mod synthgen;
pub mod tensornet;
pub mod training;

pub use error::{Error, Result};
