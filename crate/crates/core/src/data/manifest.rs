//! CSV manifests: header `filepath,attr1,attr2,...`, one image per row.
//!
//! Label strings map to class indices in sorted order. The mapping is kept
//! in a sidecar JSON file (`<manifest>.schema.json`) so checkpoints stay
//! valid when a later manifest happens to omit a class.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image_io::{load_image, save_png};
use super::{Attribute, AttributeSchema, Dataset, Provenance};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: AttributeSchema,
    pub image_size: usize,
    /// Class names per attribute; the position is the class index.
    pub class_names: Vec<Vec<String>>,
}

pub fn sidecar_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().unwrap_or_default().to_os_string();
    name.push(".schema.json");
    manifest.with_file_name(name)
}

pub fn read_sidecar(manifest: &Path) -> Result<Option<Sidecar>> {
    let path = sidecar_path(manifest);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

pub fn write_sidecar(manifest: &Path, sidecar: &Sidecar) -> Result<()> {
    let path = sidecar_path(manifest);
    fs::write(&path, serde_json::to_string_pretty(sidecar)?).map_err(|e| Error::io(&path, e))
}

/// Reads a manifest and its images, resized to `image_size`.
///
/// If a sidecar exists its label mapping is used; otherwise the mapping is
/// inferred from the observed label strings.
pub fn load_manifest(manifest_path: &Path, image_size: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(manifest_path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(manifest_path, io),
            other => Error::Ingestion {
                row: 0,
                reason: format!("{other:?}"),
            },
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Ingestion {
            row: 0,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("filepath") || header.len() < 2 {
        return Err(Error::Ingestion {
            row: 0,
            reason: "header must be `filepath,attr1,...`".into(),
        });
    }
    let attr_names = &header[1..];

    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut rows: Vec<(usize, PathBuf, Vec<String>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingestion {
            row,
            reason: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Ingestion {
                row,
                reason: format!("{} columns, expected {}", record.len(), header.len()),
            });
        }
        let rel = PathBuf::from(&record[0]);
        let path = if rel.is_absolute() { rel } else { base.join(rel) };
        if !path.exists() {
            return Err(Error::Ingestion {
                row,
                reason: format!("missing file {}", path.display()),
            });
        }
        rows.push((
            row,
            path,
            record.iter().skip(1).map(str::to_string).collect(),
        ));
    }

    let (schema, class_names) = match read_sidecar(manifest_path)? {
        Some(side) => {
            let names: Vec<&str> = side.schema.attributes().iter().map(|a| a.name.as_str()).collect();
            if names != attr_names.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Ingestion {
                    row: 0,
                    reason: "manifest header does not match its sidecar schema".into(),
                });
            }
            (side.schema, side.class_names)
        }
        None => infer_mapping(attr_names, &rows)?,
    };

    let mut items = Vec::with_capacity(rows.len());
    for (row, path, labels) in rows {
        let mut img = load_image(&path, image_size).map_err(|e| Error::Ingestion {
            row,
            reason: e.to_string(),
        })?;
        img.labels = labels
            .iter()
            .enumerate()
            .map(|(m, l)| {
                class_names[m].iter().position(|c| c == l).ok_or_else(|| Error::Ingestion {
                    row,
                    reason: format!("label '{l}' not in the sidecar mapping for '{}'", attr_names[m]),
                })
            })
            .collect::<Result<_>>()?;
        items.push(img);
    }
    Dataset::new(
        schema,
        items,
        Provenance::Manifest {
            path: manifest_path.to_path_buf(),
        },
        image_size,
        class_names,
    )
}

fn infer_mapping(attr_names: &[String], rows: &[(usize, PathBuf, Vec<String>)]) -> Result<(AttributeSchema, Vec<Vec<String>>)> {
    let class_names: Vec<Vec<String>> = (0..attr_names.len())
        .map(|m| {
            rows.iter()
                .map(|r| r.2[m].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .collect();
    let attributes: Vec<Attribute> = attr_names
        .iter()
        .zip(&class_names)
        .map(|(n, c)| Attribute {
            name: n.clone(),
            class_count: c.len(),
        })
        .collect();
    let schema = if rows.is_empty() {
        AttributeSchema::unchecked(attributes)
    } else {
        let schema = AttributeSchema::unchecked(attributes);
        schema.validate().map_err(|e| Error::Ingestion {
            row: 0,
            reason: e.to_string(),
        })?;
        schema
    };
    Ok((schema, class_names))
}

/// Writes every item as `img_NNNNN.png` under `dir`, plus `manifest.csv`
/// and its sidecar. Returns the manifest path.
pub fn export_manifest(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| Error::Ingestion {
        row: 0,
        reason: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| Error::Ingestion {
        row: 0,
        reason: e.to_string(),
    };
    let mut header = vec!["filepath".to_string()];
    header.extend(dataset.schema.attributes().iter().map(|a| a.name.clone()));
    writer.write_record(&header).map_err(csv_err)?;
    for (i, item) in dataset.items.iter().enumerate() {
        let name = format!("img_{i:05}.png");
        save_png(&dir.join(&name), item)?;
        let mut record = vec![name];
        record.extend(
            item.labels
                .iter()
                .enumerate()
                .map(|(m, &l)| dataset.class_names[m][l].clone()),
        );
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    write_sidecar(
        &manifest,
        &Sidecar {
            schema: dataset.schema.clone(),
            image_size: dataset.image_size,
            class_names: dataset.class_names.clone(),
        },
    )?;
    Ok(manifest)
}
