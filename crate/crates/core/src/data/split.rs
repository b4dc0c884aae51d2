use std::collections::BTreeSet;

use super::Dataset;
use crate::{Error, Result};

/// Splits off every item whose label for `attribute` is in `held_values`.
pub fn holdout_split(dataset: &Dataset, attribute: &str, held_values: &BTreeSet<usize>) -> Result<(Dataset, Dataset)> {
    let m = dataset
        .schema
        .index_of(attribute)
        .map_err(|_| Error::Split(format!("unknown attribute '{attribute}'")))?;
    let classes = dataset.schema.class_count(m)?;
    if held_values.is_empty() {
        return Err(Error::Split("held_values is empty".into()));
    }
    if let Some(v) = held_values.iter().find(|&&v| v >= classes) {
        return Err(Error::Split(format!("class {v} out of range for '{attribute}' ({classes} classes)")));
    }
    if held_values.len() >= classes {
        return Err(Error::Split(format!("held_values cover every class of '{attribute}'")));
    }
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| held_values.contains(&dataset.items[i].labels[m - 1]));
    let note = format!("{attribute} in {held_values:?}");
    Ok((
        dataset.subset(&train, &format!("train: {attribute} not in {held_values:?}")),
        dataset.subset(&test, &format!("test: {note}")),
    ))
}
