use std::collections::BTreeSet;

use super::RunConfig;
use crate::data::{generate_synthetic, holdout_split, load_manifest, Dataset, SyntheticConfig};
use crate::Result;

/// Builds `(train, test)` from the `[data]` section.
///
/// A holdout attribute splits the training source. Otherwise synthetic runs
/// draw the test set from the same factor grid with `test_seed`, and
/// manifest runs use `test_manifest` or fall back to the training set.
pub fn load_datasets(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let d = &config.data;
    let source = match &d.manifest {
        Some(path) => load_manifest(path, config.model.image_size)?,
        None => generate_synthetic(&d.synthetic)?,
    };
    if let Some(attr) = &d.holdout_attribute {
        let held: BTreeSet<usize> = d.holdout_values.iter().copied().collect();
        return holdout_split(&source, attr, &held);
    }
    let test = match (&d.manifest, &d.test_manifest) {
        (_, Some(path)) => load_manifest(path, config.model.image_size)?,
        (Some(_), None) => source.clone(),
        (None, None) => generate_synthetic(&SyntheticConfig {
            seed: d.test_seed,
            count_per_combination: d.test_count_per_combination,
            ..d.synthetic.clone()
        })?,
    };
    Ok((source, test))
}
