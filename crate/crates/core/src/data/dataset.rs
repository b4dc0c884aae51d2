use std::path::PathBuf;

use disentangle_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use super::AttributeSchema;
use crate::{Error, Result};

/// One image with a class label per schema attribute.
///
/// `pixels` is row-major `(H, W, C)` with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
}

impl LabeledImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} pixel values for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            labels,
        })
    }

    /// Pixels rearranged to `(C, H, W)`.
    pub fn chw(&self) -> Vec<f32> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.pixels[(y * w + x) * c + ch];
                }
            }
        }
        out
    }

    /// Inverse of [`LabeledImage::chw`].
    pub fn from_chw(chw: &[f32], channels: usize, height: usize, width: usize, labels: Vec<usize>) -> Self {
        let mut pixels = vec![0.0; chw.len()];
        for ch in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    pixels[(y * width + x) * channels + ch] = chw[(ch * height + y) * width + x];
                }
            }
        }
        Self {
            height,
            width,
            channels,
            pixels,
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64 },
    Manifest { path: PathBuf },
    Derived { from: Box<Provenance>, note: String },
}

/// An immutable labelled image collection.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub items: Vec<LabeledImage>,
    pub provenance: Provenance,
    pub image_size: usize,
    /// Human-readable class names per attribute; index = class id.
    pub class_names: Vec<Vec<String>>,
}

impl Dataset {
    pub fn new(
        schema: AttributeSchema,
        items: Vec<LabeledImage>,
        provenance: Provenance,
        image_size: usize,
        class_names: Vec<Vec<String>>,
    ) -> Result<Self> {
        for (i, item) in items.iter().enumerate() {
            schema
                .check_labels(&item.labels)
                .map_err(|e| Error::Contract(format!("item {i}: {e}")))?;
            if item.height != image_size || item.width != image_size || item.channels != 3 {
                return Err(Error::Shape(format!(
                    "item {i} is {}x{}x{}, expected {image_size}x{image_size}x3",
                    item.height, item.width, item.channels
                )));
            }
        }
        if class_names.len() != schema.len()
            || class_names
                .iter()
                .zip(schema.attributes())
                .any(|(n, a)| n.len() != a.class_count)
        {
            return Err(Error::Contract("class names do not match the schema".into()));
        }
        Ok(Self {
            schema,
            items,
            provenance,
            image_size,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Per-attribute class histograms.
    pub fn label_marginals(&self) -> Vec<Vec<usize>> {
        let mut counts: Vec<Vec<usize>> = self
            .schema
            .attributes()
            .iter()
            .map(|a| vec![0; a.class_count])
            .collect();
        for item in &self.items {
            for (m, &l) in item.labels.iter().enumerate() {
                counts[m][l] += 1;
            }
        }
        counts
    }

    /// Copy restricted to the items at `indices` (in that order).
    pub fn subset(&self, indices: &[usize], note: &str) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            provenance: Provenance::Derived {
                from: Box::new(self.provenance.clone()),
                note: note.to_string(),
            },
            image_size: self.image_size,
            class_names: self.class_names.clone(),
        }
    }

    /// Items whose label for attribute `m` (1-based) equals `class`.
    pub fn indices_with_label(&self, m: usize, class: usize) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.labels[m - 1] == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Stacks the selected items into an NCHW batch plus their labels.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Batch<T> {
        let s = self.image_size;
        let mut data = Vec::with_capacity(indices.len() * 3 * s * s);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let item = &self.items[i];
            data.extend(item.chw().into_iter().map(|v| T::lit(v as f64)));
            labels.push(item.labels.clone());
        }
        Batch {
            images: Tensor::from_vec(data, &[indices.len(), 3, s, s]),
            labels,
        }
    }
}

/// An NCHW image batch and its `(b, M)` label matrix.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    pub images: Tensor<T>,
    pub labels: Vec<Vec<usize>>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels of attribute `m` (1-based) across the batch.
    pub fn labels_of(&self, m: usize) -> Vec<usize> {
        self.labels.iter().map(|l| l[m - 1]).collect()
    }
}

/// Converts an NCHW tensor slice for sample `i` to an HWC image.
pub fn tensor_image<T: Real>(images: &Tensor<T>, i: usize, labels: Vec<usize>) -> LabeledImage {
    let s = images.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let n = c * h * w;
    let chw: Vec<f32> = images.data()[i * n..(i + 1) * n]
        .iter()
        .map(|v| v.to_f64_lossy().clamp(-1.0, 1.0) as f32)
        .collect();
    LabeledImage::from_chw(&chw, c, h, w, labels)
}
