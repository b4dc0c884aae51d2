use std::collections::BTreeMap;
use std::fmt::Write as _;

use disentangle_tensor::{no_grad, Tensor};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{frechet_distance, mean_std, EvalClassifiers, ExtractorId, FeatureExtractor};
use crate::data::Dataset;
use crate::latent_ops::{apply_code, mean_code, swap};
use crate::model::Networks;
use crate::training::trainer::argmax;
use crate::{Error, Result};

const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy)]
pub enum TransferProtocol<'a> {
    /// Swap in the code of a random test image of the target class.
    DonorSwap,
    /// Swap in the class-mean code computed over `reference`.
    MeanCode { reference: &'a Dataset },
}

impl TransferProtocol<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            TransferProtocol::DonorSwap => "donor_swap",
            TransferProtocol::MeanCode { .. } => "mean_code",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStat {
    /// Accuracy per target class.
    pub per_class: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl AccuracyStat {
    fn from_counts(hits: &[usize], totals: &[usize]) -> Self {
        let per_class: Vec<f64> = hits
            .iter()
            .zip(totals)
            .map(|(&h, &t)| h as f64 / t.max(1) as f64)
            .collect();
        let (mean, std) = mean_std(&per_class);
        Self { per_class, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub attribute: String,
    pub protocol: String,
    pub syntheses: usize,
    /// Evaluation classifier says the output has the target class.
    pub target: AccuracyStat,
    /// Evaluation classifier still finds the source's label, per other attribute.
    pub preserved: BTreeMap<String, AccuracyStat>,
    pub fid: Option<f64>,
    pub extractor: Option<ExtractorId>,
    pub evaluator_sha256: String,
}

impl TransferReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Transfer of {} ({}, {} syntheses)", self.attribute, self.protocol, self.syntheses);
        let _ = writeln!(s, "{:<24} {:>8} {:>8}", "accuracy", "mean", "std");
        let _ = writeln!(s, "{:<24} {:>8.3} {:>8.3}", format!("target {}", self.attribute), self.target.mean, self.target.std);
        for (name, stat) in &self.preserved {
            let _ = writeln!(s, "{:<24} {:>8.3} {:>8.3}", format!("preserved {name}"), stat.mean, stat.std);
        }
        if let (Some(fid), Some(id)) = (self.fid, &self.extractor) {
            let _ = writeln!(s, "FID {fid:.3} (extractor {} {})", id.name, &id.sha256[..12.min(id.sha256.len())]);
        }
        s
    }
}

/// Scores any synthesizer `f(sources, donors, target_class) -> images` by
/// translating every test image to every class of attribute `m`.
pub fn transfer_accuracy_with<F>(
    test: &Dataset,
    evaluator: &EvalClassifiers,
    m: usize,
    protocol_name: &str,
    seed: u64,
    extractor: Option<&dyn FeatureExtractor>,
    mut synthesize: F,
) -> Result<TransferReport>
where
    F: FnMut(&Tensor<f32>, &Tensor<f32>, usize) -> Result<Tensor<f32>>,
{
    test.schema.check_index(m)?;
    if evaluator.schema != test.schema || evaluator.classifiers.len() != test.schema.len() {
        return Err(Error::Contract("missing evaluation classifier for the test schema".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptySelection("empty test set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = test.schema.class_count(m)?;
    let attrs = test.schema.len();
    let mut hits = vec![vec![0usize; k]; attrs];
    let mut totals = vec![0usize; k];
    let mut fake_features: Vec<DMatrix<f64>> = Vec::new();
    let all: Vec<usize> = (0..test.len()).collect();
    for c in 0..k {
        let donors_of_c = test.indices_with_label(m, c);
        if donors_of_c.is_empty() {
            return Err(Error::EmptySelection(format!("no test images of class {c} to donate")));
        }
        for chunk in all.chunks(CHUNK) {
            let donors: Vec<usize> = chunk.iter().map(|_| *donors_of_c.choose(&mut rng).unwrap()).collect();
            let src = test.batch::<f32>(chunk);
            let don = test.batch::<f32>(&donors);
            let out = synthesize(&src.images, &don.images, c)?;
            if out.shape() != src.images.shape() {
                return Err(Error::Shape("synthesizer changed the batch shape".into()));
            }
            no_grad(|| {
                for (a, clf) in evaluator.classifiers.iter().enumerate() {
                    let logits = clf.logits(&out);
                    let kk = clf.classes();
                    for (i, row) in logits.data().chunks(kk).enumerate() {
                        let want = if a + 1 == m { c } else { src.labels[i][a] };
                        hits[a][c] += (argmax(row) == want) as usize;
                    }
                }
            });
            totals[c] += chunk.len();
            if let Some(x) = extractor {
                fake_features.push(x.features(&out)?);
            }
        }
    }
    let (fid, extractor_id) = match extractor {
        Some(x) => {
            let mut real = Vec::new();
            for chunk in all.chunks(CHUNK) {
                real.push(x.features(&test.batch::<f32>(chunk).images)?);
            }
            (Some(frechet_distance(&stack(&real), &stack(&fake_features))?), Some(x.id()))
        }
        None => (None, None),
    };
    let names: Vec<String> = test.schema.attributes().iter().map(|a| a.name.clone()).collect();
    let preserved = (0..attrs)
        .filter(|&a| a + 1 != m)
        .map(|a| (names[a].clone(), AccuracyStat::from_counts(&hits[a], &totals)))
        .collect();
    Ok(TransferReport {
        attribute: names[m - 1].clone(),
        protocol: protocol_name.to_string(),
        syntheses: totals.iter().sum(),
        target: AccuracyStat::from_counts(&hits[m - 1], &totals),
        preserved,
        fid,
        extractor: extractor_id,
        evaluator_sha256: evaluator.sha256(),
    })
}

fn stack(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.nrows()).copy_from(p);
        r += p.nrows();
    }
    out
}

/// [`transfer_accuracy_with`] driven by the model's encoders and decoder.
pub fn transfer_accuracy(
    nets: &Networks<f32>,
    test: &Dataset,
    evaluator: &EvalClassifiers,
    m: usize,
    protocol: TransferProtocol<'_>,
    seed: u64,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<TransferReport> {
    match protocol {
        TransferProtocol::DonorSwap => {
            transfer_accuracy_with(test, evaluator, m, protocol.name(), seed, extractor, |src, don, _| {
                swap(nets, src, &BTreeMap::from([(m, don.clone())]))
            })
        }
        TransferProtocol::MeanCode { reference } => {
            let k = reference.schema.class_count(m)?;
            let codes = (0..k)
                .map(|c| mean_code::<f32>(nets, reference, m, Some(c)))
                .collect::<Result<Vec<_>>>()?;
            transfer_accuracy_with(test, evaluator, m, protocol.name(), seed, extractor, |src, _, c| {
                apply_code(nets, src, m, &codes[c])
            })
        }
    }
}
