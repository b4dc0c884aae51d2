//! Label-free manipulations of trained codes: swapping attribute codes
//! between images, convex mixing, linear interpolation and class-mean codes.
//!
//! All functions are read-only over the networks.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use disentangle_tensor::{no_grad, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::{LatentBundle, Networks};
use crate::{Error, Result};

/// Tolerance on `sum(weights) = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Encodes `source`, replaces code `m` with the donor's `E_m` code for every
/// `(m, donor)` entry, and decodes. Donor batches must match the source batch.
pub fn swap<T: Real>(nets: &Networks<T>, source: &Tensor<T>, donors: &BTreeMap<usize, Tensor<T>>) -> Result<Tensor<T>> {
    no_grad(|| {
        let bundle = swap_bundle(nets, source, donors)?;
        nets.decode(&bundle)
    })
}

/// The code bundle [`swap`] decodes.
pub fn swap_bundle<T: Real>(
    nets: &Networks<T>,
    source: &Tensor<T>,
    donors: &BTreeMap<usize, Tensor<T>>,
) -> Result<LatentBundle<T>> {
    if donors.is_empty() {
        return Err(Error::Contract("swap needs at least one attribute".into()));
    }
    let mut bundle = nets.encode_all(source)?;
    for (&m, donor) in donors {
        nets.schema.check_index(m)?;
        if donor.shape() != source.shape() {
            return Err(Error::Shape(format!(
                "donor for attribute {m} is {:?}, source is {:?}",
                donor.shape(),
                source.shape()
            )));
        }
        bundle.codes[m] = nets.encode(m, donor)?;
    }
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    /// Non-negative weights summing to one.
    #[default]
    Convex,
    /// Any real weights summing to one (extrapolation allowed).
    Signed,
}

pub fn check_weights(weights: &[f64], mode: MixMode) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Contract("mix needs at least one component".into()));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Contract("mix weights must be finite".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::Contract(format!("mix weights sum to {sum}, not 1")));
    }
    if mode == MixMode::Convex && weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Contract("convex mix weights must be non-negative".into()));
    }
    Ok(())
}

fn lex_cmp<T: Real>(a: &[T], b: &[T]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.to_f64_lossy().total_cmp(&y.to_f64_lossy()))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// `sum_i w_i z_i`, accumulated in a canonical order (by weight, then by
/// code values) so the result does not depend on the order of `terms`.
pub fn weighted_code<T: Real>(terms: &[(Tensor<T>, f64)]) -> Tensor<T> {
    let mut order: Vec<&(Tensor<T>, f64)> = terms.iter().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lex_cmp(a.0.data(), b.0.data())));
    let shape = order[0].0.shape().to_vec();
    let mut acc = vec![T::zero(); order[0].0.numel()];
    for (z, w) in order {
        let w = T::lit(*w);
        for (a, &v) in acc.iter_mut().zip(z.data()) {
            *a = *a + w * v;
        }
    }
    Tensor::from_vec(acc, &shape)
}

/// Decodes `base` with its code `m` replaced by `sum_i w_i E_m(x_i)`.
/// Each component and `base` is a single image `[1, 3, H, W]`.
pub fn mix<T: Real>(
    nets: &Networks<T>,
    m: usize,
    components: &[(Tensor<T>, f64)],
    base: &Tensor<T>,
    mode: MixMode,
) -> Result<Tensor<T>> {
    nets.schema.check_index(m)?;
    let weights: Vec<f64> = components.iter().map(|c| c.1).collect();
    check_weights(&weights, mode)?;
    no_grad(|| {
        let codes = components
            .iter()
            .map(|(x, w)| Ok((nets.encode(m, x)?, *w)))
            .collect::<Result<Vec<_>>>()?;
        let mut bundle = nets.encode_all(base)?;
        if codes.iter().any(|(z, _)| z.shape() != bundle.codes[m].shape()) {
            return Err(Error::Shape("mix components and base differ in shape".into()));
        }
        bundle.codes[m] = weighted_code(&codes);
        nets.decode(&bundle)
    })
}

/// `steps` evenly spaced `alpha` values on `[0, 1]`, endpoints included.
pub fn alphas(steps: usize) -> Vec<f64> {
    (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect()
}

/// Decodes `alpha z_m(i) + (1 - alpha) z_m(j)` for each alpha, with the
/// other codes from `base` (default: `image_j`). Returns `[steps, 3, H, W]`;
/// frame 0 is the pure `image_j` code, the last frame the pure `image_i` code.
pub fn interpolate<T: Real>(
    nets: &Networks<T>,
    m: usize,
    image_i: &Tensor<T>,
    image_j: &Tensor<T>,
    steps: usize,
    base: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    nets.schema.check_index(m)?;
    if steps < 2 {
        return Err(Error::Contract(format!("interpolation needs at least 2 steps (got {steps})")));
    }
    no_grad(|| {
        let zi = nets.encode(m, image_i)?;
        let zj = nets.encode(m, image_j)?;
        let base = nets.encode_all(base.unwrap_or(image_j))?;
        let frames: Vec<Tensor<T>> = alphas(steps)
            .into_iter()
            .map(|a| interpolate_code(&zi, &zj, a))
            .collect();
        let n = frames.len();
        let mut bundle = base.select(&vec![0; n]);
        bundle.codes[m] = Tensor::concat(&frames, 0);
        nets.decode(&bundle)
    })
}

/// `alpha a + (1 - alpha) b`, elementwise.
pub fn interpolate_code<T: Real>(a: &Tensor<T>, b: &Tensor<T>, alpha: f64) -> Tensor<T> {
    let (wa, wb) = (T::lit(alpha), T::lit(1.0 - alpha));
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| wa * x + wb * y).collect();
    Tensor::from_vec(data, a.shape())
}

/// Elementwise mean of `E_m` over the dataset, optionally restricted to
/// items whose label for `m` is `label`. Shape `[1, C, h, w]`.
pub fn mean_code<T: Real>(nets: &Networks<T>, dataset: &Dataset, m: usize, label: Option<usize>) -> Result<Tensor<T>> {
    nets.schema.check_index(m)?;
    let idx: Vec<usize> = match label {
        Some(c) => dataset.indices_with_label(m, c),
        None => (0..dataset.len()).collect(),
    };
    if idx.is_empty() {
        return Err(Error::EmptySelection(format!("no items for attribute {m} with label {label:?}")));
    }
    let mut acc: Option<Vec<T>> = None;
    let mut shape = Vec::new();
    no_grad(|| -> Result<()> {
        for chunk in idx.chunks(64) {
            let z = nets.encode(m, &dataset.batch::<T>(chunk).images)?;
            let per = z.numel() / chunk.len();
            shape = vec![1, z.dim(1), z.dim(2), z.dim(3)];
            let acc = acc.get_or_insert_with(|| vec![T::zero(); per]);
            for row in z.data().chunks(per) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a = *a + v;
                }
            }
        }
        Ok(())
    })?;
    let inv = T::lit(1.0 / idx.len() as f64);
    let data = acc.expect("nonempty").into_iter().map(|v| v * inv).collect();
    Ok(Tensor::from_vec(data, &shape))
}

/// Decodes `source` with code `m` replaced by a fixed code (for example a
/// [`mean_code`]) broadcast across the batch.
pub fn apply_code<T: Real>(nets: &Networks<T>, source: &Tensor<T>, m: usize, code: &Tensor<T>) -> Result<Tensor<T>> {
    nets.schema.check_index(m)?;
    no_grad(|| {
        let mut bundle = nets.encode_all(source)?;
        let b = source.dim(0);
        if code.shape()[1..] != bundle.codes[m].shape()[1..] {
            return Err(Error::Shape(format!(
                "code {:?} does not match {:?}",
                code.shape(),
                bundle.codes[m].shape()
            )));
        }
        bundle.codes[m] = code.index_select0(&vec![0; b]);
        nets.decode(&bundle)
    })
}
