use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{AttributeSchema, Dataset};
use crate::model::{blob, unblob, Classifier, ModelConfig};
use crate::training::{classifier_accuracy, fit_classifiers, AdamHyper, PretrainReport};
use crate::{Error, Result};

const MANIFEST: &str = "eval_classifiers.json";
const BLOB: &str = "eval_classifiers.bin";

/// Image classifiers trained apart from the model's own, used to score
/// synthesized images.
#[derive(Debug, Clone)]
pub struct EvalClassifiers {
    pub config: ModelConfig,
    pub schema: AttributeSchema,
    pub classifiers: Vec<Classifier<f32>>,
    pub report: PretrainReport,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    schema: AttributeSchema,
    report: PretrainReport,
    sizes: Vec<Vec<usize>>,
    sha256: String,
}

impl EvalClassifiers {
    pub fn untrained(config: &ModelConfig, schema: &AttributeSchema, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classifiers = schema
            .class_counts()
            .into_iter()
            .map(|k| Classifier::new(config, k, &mut rng))
            .collect();
        Self {
            config: config.clone(),
            schema: schema.clone(),
            classifiers,
            report: PretrainReport { steps: 0, accuracy: vec![] },
        }
    }

    pub fn fit(
        config: &ModelConfig,
        data: &Dataset,
        seed: u64,
        max_steps: u64,
        target_accuracy: f64,
        batch_size: usize,
        hyper: AdamHyper,
    ) -> Result<Self> {
        let mut this = Self::untrained(config, &data.schema, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        this.report = fit_classifiers(
            &mut this.classifiers,
            data,
            max_steps,
            target_accuracy,
            batch_size,
            hyper,
            &mut rng,
        )?;
        Ok(this)
    }

    pub fn accuracy(&self, data: &Dataset) -> Vec<f64> {
        classifier_accuracy(&self.classifiers, data)
    }

    fn blob(&self) -> Vec<u8> {
        self.classifiers
            .iter()
            .flat_map(|c| c.params.tensors().iter().flat_map(|t| blob(t.data())))
            .collect()
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.blob()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = self.blob();
        let manifest = Manifest {
            config: self.config.clone(),
            schema: self.schema.clone(),
            report: self.report.clone(),
            sizes: self
                .classifiers
                .iter()
                .map(|c| c.params.tensors().iter().map(|t| t.numel()).collect())
                .collect(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        let path = dir.join(BLOB);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        let path = dir.join(BLOB);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let corrupt = |reason: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            reason,
        };
        if hex::encode(Sha256::digest(&bytes)) != manifest.sha256 {
            return Err(corrupt("evaluation classifier hash mismatch".into()));
        }
        let mut this = Self::untrained(&manifest.config, &manifest.schema, 0);
        let values: Vec<f32> = unblob(&bytes, "f32");
        let mut offset = 0;
        for (c, sizes) in this.classifiers.iter_mut().zip(&manifest.sizes) {
            if sizes.len() != c.params.len() {
                return Err(corrupt("evaluation classifier layout mismatch".into()));
            }
            for (i, &n) in sizes.iter().enumerate() {
                if c.params.get(i).numel() != n || offset + n > values.len() {
                    return Err(corrupt("evaluation classifier layout mismatch".into()));
                }
                c.params.set(i, values[offset..offset + n].to_vec());
                offset += n;
            }
        }
        this.report = manifest.report;
        Ok(this)
    }
}
