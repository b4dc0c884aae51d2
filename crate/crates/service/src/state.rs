use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use disentangle_core::data::image_io::encode_png;
use disentangle_core::data::{tensor_image, Dataset};
use disentangle_core::model::{load_networks, Networks};
use disentangle_core::training::{load_datasets, parse_config};
use disentangle_core::{Error, Result};
use disentangle_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Which split of the checkpoint's data feeds the sample catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatalogSplit {
    Train,
    #[default]
    Test,
}

impl std::str::FromStr for CatalogSplit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split '{other}' (expected train or test)")),
        }
    }
}

pub struct CatalogEntry {
    pub id: usize,
    pub labels: Vec<usize>,
    /// `[1, 3, S, S]`.
    pub image: Tensor<f32>,
    pub thumbnail: String,
}

/// Everything a request handler reads. Immutable after construction apart
/// from the request counters.
pub struct ServiceState {
    pub nets: Networks<f32>,
    pub class_names: Vec<Vec<String>>,
    pub checkpoint_sha256: String,
    pub catalog: Vec<CatalogEntry>,
    counters: BTreeMap<&'static str, AtomicU64>,
}

pub(crate) const ENDPOINTS: [&str; 6] = ["schema", "samples", "transfer", "mix", "interpolate", "spec"];

pub fn png_base64(images: &Tensor<f32>, i: usize) -> Result<String> {
    Ok(STANDARD.encode(encode_png(&tensor_image(images, i, Vec::new()))?))
}

impl ServiceState {
    pub fn new(
        nets: Networks<f32>,
        class_names: Vec<Vec<String>>,
        checkpoint_sha256: String,
        catalog: &Dataset,
    ) -> Result<Self> {
        if catalog.schema != nets.schema {
            return Err(Error::Config("catalog schema differs from the model schema".into()));
        }
        let catalog = (0..catalog.len())
            .map(|i| {
                let image = catalog.batch::<f32>(&[i]).images;
                Ok(CatalogEntry {
                    id: i,
                    labels: catalog.items[i].labels.clone(),
                    thumbnail: png_base64(&image, 0)?,
                    image,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            nets,
            class_names,
            checkpoint_sha256,
            catalog,
            counters: ENDPOINTS.iter().map(|&e| (e, AtomicU64::new(0))).collect(),
        })
    }

    /// Loads networks from a checkpoint directory and builds the catalog
    /// from the data section of the `config.toml` stored beside them.
    pub fn from_checkpoint(dir: &Path, split: CatalogSplit) -> Result<Self> {
        let (nets, manifest) = load_networks::<f32>(dir)?;
        let path = dir.join("config.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config = parse_config(&text)?;
        let (train, test) = load_datasets(&config)?;
        let data = match split {
            CatalogSplit::Train => train,
            CatalogSplit::Test => test,
        };
        Self::new(nets, manifest.class_names, manifest.params_sha256, &data)
    }

    pub fn entry(&self, id: usize) -> std::result::Result<&CatalogEntry, ApiError> {
        self.catalog
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("no sample with id {id} (catalog has {})", self.catalog.len())))
    }

    /// 1-based attribute index for a name.
    pub fn attribute(&self, name: &str) -> std::result::Result<usize, ApiError> {
        self.nets
            .schema
            .index_of(name)
            .map_err(|_| ApiError::unprocessable(format!("unknown attribute '{name}'")))
    }

    pub fn class_name(&self, m: usize, class: usize) -> String {
        self.class_names
            .get(m - 1)
            .and_then(|c| c.get(class))
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }

    pub fn named_labels(&self, labels: &[usize]) -> BTreeMap<String, String> {
        self.nets
            .schema
            .attributes()
            .iter()
            .enumerate()
            .map(|(i, a)| (a.name.clone(), self.class_name(i + 1, labels[i])))
            .collect()
    }

    pub(crate) fn count(&self, endpoint: &'static str) {
        if let Some(c) = self.counters.get(endpoint) {
            c.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Requests served per endpoint since start.
    pub fn request_counts(&self) -> BTreeMap<String, u64> {
        self.counters
            .iter()
            .map(|(k, v)| (k.to_string(), v.load(Ordering::Relaxed)))
            .collect()
    }
}
