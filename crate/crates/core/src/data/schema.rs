use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub class_count: usize,
}

/// Ordered attributes with their class counts.
///
/// Attribute indices are 1-based (`1..=M`); index 0 denotes the unspecified
/// variation code and never names a schema entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<(impl Into<String>, usize)>) -> Result<Self> {
        let attributes: Vec<Attribute> = attributes
            .into_iter()
            .map(|(name, class_count)| Attribute {
                name: name.into(),
                class_count,
            })
            .collect();
        let schema = Self { attributes };
        schema.validate()?;
        Ok(schema)
    }

    /// Builds a schema without validation; only for datasets with no
    /// observed labels (a header-only manifest).
    pub(crate) fn unchecked(attributes: Vec<Attribute>) -> Self {
        Self { attributes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::Config("schema needs at least one attribute".into()));
        }
        let mut seen = HashSet::new();
        for a in &self.attributes {
            if a.class_count < 2 {
                return Err(Error::Config(format!(
                    "attribute '{}' has {} classes; at least 2 required",
                    a.name, a.class_count
                )));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Config(format!("duplicate attribute name '{}'", a.name)));
            }
        }
        Ok(())
    }

    /// Number of modelled attributes `M`.
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    /// Attribute `m` for `m` in `1..=M`.
    pub fn attribute(&self, m: usize) -> Result<&Attribute> {
        self.check_index(m)?;
        Ok(&self.attributes[m - 1])
    }

    pub fn class_count(&self, m: usize) -> Result<usize> {
        Ok(self.attribute(m)?.class_count)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.class_count).collect()
    }

    /// 1-based index of the attribute called `name`.
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .map(|i| i + 1)
            .ok_or_else(|| Error::Config(format!("unknown attribute '{name}'")))
    }

    pub fn check_index(&self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(Error::Contract(
                "attribute index 0 is the unspecified-variation code and has no classifier".into(),
            ));
        }
        if m > self.len() {
            return Err(Error::Contract(format!(
                "attribute index {m} out of range 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Checks one label vector against the schema.
    pub fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::Contract(format!(
                "expected {} labels, got {}",
                self.len(),
                labels.len()
            )));
        }
        for (a, &l) in self.attributes.iter().zip(labels) {
            if l >= a.class_count {
                return Err(Error::Contract(format!(
                    "label {l} out of range for attribute '{}' with {} classes",
                    a.name, a.class_count
                )));
            }
        }
        Ok(())
    }
}
