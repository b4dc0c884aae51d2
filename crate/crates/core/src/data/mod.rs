//! Attribute schemas, labelled image datasets, synthetic generation and
//! manifest ingestion.

mod dataset;
pub mod image_io;
mod manifest;
mod schema;
mod split;
mod synthetic;

pub use dataset::{tensor_image, Batch, Dataset, LabeledImage, Provenance};
pub use manifest::{export_manifest, load_manifest, read_sidecar, sidecar_path, write_sidecar, Sidecar};
pub use schema::{Attribute, AttributeSchema};
pub use split::holdout_split;
pub use synthetic::{generate_synthetic, render, SyntheticConfig, SHAPE_NAMES};
