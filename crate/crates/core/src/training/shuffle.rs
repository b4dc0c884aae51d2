use disentangle_tensor::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ShuffleMode;
use crate::model::{LatentBundle, Networks};
use crate::{Error, Result};

/// Per-attribute donor indices: sample `i` of the synthesised batch takes
/// attribute `m`'s code from sample `permutations[m - 1][i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShuffleSpec {
    pub permutations: Vec<Vec<usize>>,
}

impl ShuffleSpec {
    pub fn identity(b: usize, m: usize) -> Self {
        Self {
            permutations: vec![(0..b).collect(); m],
        }
    }

    pub fn batch_size(&self) -> usize {
        self.permutations.first().map_or(0, Vec::len)
    }

    /// `induced[i][m] = labels[r_m[i]][m]`.
    pub fn induced_labels(&self, labels: &[Vec<usize>]) -> Vec<Vec<usize>> {
        (0..self.batch_size())
            .map(|i| {
                self.permutations
                    .iter()
                    .enumerate()
                    .map(|(m, r)| labels[r[i]][m])
                    .collect()
            })
            .collect()
    }

    pub fn is_bijective(&self) -> bool {
        self.permutations.iter().all(|r| {
            let mut s = r.clone();
            s.sort_unstable();
            s.iter().enumerate().all(|(i, &v)| i == v)
        })
    }
}

/// `M` independent donor index vectors, permutations by default.
pub fn sample_shuffle(b: usize, m: usize, rng: &mut ChaCha8Rng, mode: ShuffleMode) -> Result<ShuffleSpec> {
    if b < 2 {
        return Err(Error::Contract(format!("shuffling needs a batch of at least 2 (got {b})")));
    }
    let permutations = (0..m)
        .map(|_| match mode {
            ShuffleMode::Permutation => {
                let mut r: Vec<usize> = (0..b).collect();
                r.shuffle(rng);
                r
            }
            ShuffleMode::WithReplacement => (0..b).map(|_| rng.gen_range(0..b)).collect(),
        })
        .collect();
    Ok(ShuffleSpec { permutations })
}

/// The bundle with code `m` gathered by `r_m`; the nuisance code stays put.
pub fn shuffle_bundle<T: Real>(bundle: &LatentBundle<T>, spec: &ShuffleSpec) -> Result<LatentBundle<T>> {
    if spec.permutations.len() != bundle.attributes() || spec.batch_size() != bundle.batch_size() {
        return Err(Error::Shape(format!(
            "shuffle spec {}x{} vs bundle of {} codes, batch {}",
            spec.permutations.len(),
            spec.batch_size(),
            bundle.codes.len(),
            bundle.batch_size()
        )));
    }
    let mut codes: Vec<Tensor<T>> = vec![bundle.codes[0].clone()];
    codes.extend(
        spec.permutations
            .iter()
            .zip(&bundle.codes[1..])
            .map(|(r, z)| z.index_select0(r)),
    );
    Ok(LatentBundle {
        codes,
        sources: bundle.sources.clone(),
    })
}

/// Decodes the shuffled bundle and returns it with the induced labels.
pub fn synthesize_shuffled<T: Real>(
    nets: &Networks<T>,
    bundle: &LatentBundle<T>,
    spec: &ShuffleSpec,
    labels: &[Vec<usize>],
) -> Result<(Tensor<T>, Vec<Vec<usize>>)> {
    if labels.len() != spec.batch_size() {
        return Err(Error::Shape(format!(
            "{} label rows for a spec of batch {}",
            labels.len(),
            spec.batch_size()
        )));
    }
    let x = nets.decode(&shuffle_bundle(bundle, spec)?)?;
    Ok((x, spec.induced_labels(labels)))
}
