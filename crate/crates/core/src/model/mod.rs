//! Encoders, decoder, attribute classifiers and patch critic.
//!
//! Tensors are NCHW throughout: images `[b, 3, H, W]`, codes
//! `[b, 4w, H/4, W/4]`.

mod checkpoint;
mod config;
pub mod layers;
mod networks;

pub(crate) use checkpoint::{blob, unblob};
pub use checkpoint::{load_networks, params_sha256, read_manifest, save_networks, CheckpointManifest, ParamEntry};
pub use config::ModelConfig;
pub use layers::ParamSet;
pub use networks::{Classifier, Critic, Decoder, Encoder, Group, LatentBundle, Networks};
