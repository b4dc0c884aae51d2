use disentangle_tensor::no_grad;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::Networks;
use crate::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// `-sum p ln p` in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

pub fn posterior_entropy(rows: &[Vec<f64>]) -> Result<EntropySummary> {
    if rows.is_empty() {
        return Err(Error::EmptySelection("no posteriors".into()));
    }
    let mut per_sample = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Contract(format!("row {i} is not a PMF (sum {sum})")));
        }
        per_sample.push(entropy(row));
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(EntropySummary { per_sample, mean })
}

/// Entropy of `C_target` posteriors evaluated on the `E_code` codes of every
/// dataset item.
pub fn code_posterior_entropy(nets: &Networks<f32>, data: &Dataset, code: usize, target: usize) -> Result<EntropySummary> {
    nets.schema.check_index(target)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::with_capacity(data.len());
    no_grad(|| -> Result<()> {
        for chunk in idx.chunks(64) {
            let z = nets.encode(code, &data.batch::<f32>(chunk).images)?;
            let p = nets.classify_latent(&z, target)?;
            let k = p.dim(1);
            rows.extend(p.data().chunks(k).map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()));
        }
        Ok(())
    })?;
    posterior_entropy(&rows)
}
