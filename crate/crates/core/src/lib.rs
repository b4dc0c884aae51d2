//! Adversarial learning of disentangled attribute representations.
//!
//! Each of `M` labelled attributes gets its own convolutional encoder, plus
//! one encoder (index 0) for everything the labels do not describe. A shared
//! decoder reconstructs images from the concatenated codes. Per-attribute
//! classifiers push code `m` to predict attribute `m` and to be uninformative
//! (uniform posterior) about every other attribute; a Wasserstein critic with
//! gradient penalty keeps decodes of shuffled code combinations realistic.

pub mod data;
pub mod latent_ops;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod training;
mod error;

pub use error::{Error, Result};
