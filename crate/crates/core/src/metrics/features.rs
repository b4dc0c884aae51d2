use disentangle_tensor::{no_grad, Tensor};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EvalClassifiers;
use crate::Result;

/// Name and parameter hash of a feature extractor, stamped on every report
/// that uses it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorId {
    pub name: String,
    pub sha256: String,
}

pub trait FeatureExtractor {
    fn id(&self) -> ExtractorId;
    /// One feature row per image of an NCHW batch.
    fn features(&self, images: &Tensor<f32>) -> Result<DMatrix<f64>>;
}

/// Global-average-pooled block-2 activations of every evaluation
/// classifier, concatenated.
pub struct ClassifierFeatures<'a> {
    pub classifiers: &'a EvalClassifiers,
}

impl FeatureExtractor for ClassifierFeatures<'_> {
    fn id(&self) -> ExtractorId {
        ExtractorId {
            name: "classifier-block2-gap".into(),
            sha256: self.classifiers.sha256(),
        }
    }

    fn features(&self, images: &Tensor<f32>) -> Result<DMatrix<f64>> {
        let b = images.dim(0);
        let pooled: Vec<Vec<f32>> = no_grad(|| {
            self.classifiers
                .classifiers
                .iter()
                .map(|c| {
                    let f = c.features(images);
                    let (ch, hw) = (f.dim(1), f.dim(2) * f.dim(3));
                    f.reshape(&[b, ch, hw]).mean_axis(2).to_vec()
                })
                .collect()
        });
        let width: usize = pooled.iter().map(|p| p.len() / b.max(1)).sum();
        let mut out = DMatrix::zeros(b, width);
        for i in 0..b {
            let mut col = 0;
            for p in &pooled {
                let w = p.len() / b;
                for k in 0..w {
                    out[(i, col)] = p[i * w + k] as f64;
                    col += 1;
                }
            }
        }
        Ok(out)
    }
}
